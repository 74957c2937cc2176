// Minimal 8-bit RGB PNG writer for the render subcommand.
#pragma once

#include <string>

#include "locogs/render.hpp"

namespace locogs {

void save_png(const Image& image, const std::string& path);

}  // namespace locogs
