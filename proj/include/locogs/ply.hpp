// Binary little-endian splat PLY reader/writer following the de-facto 3DGS
// export layout: x y z [nx ny nz] f_dc_0..2 [f_rest_*] opacity scale_0..2
// rot_0..3, all float32. On load the raw fields are converted to working
// values (sigmoid opacity, exp scale, normalized rotation); save inverts.
#pragma once

#include <stdexcept>
#include <string>

#include "locogs/model.hpp"

namespace locogs {

class PlyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

SplatScene load_ply(const std::string& path);
void save_ply(const SplatScene& scene, const std::string& path);

}  // namespace locogs
