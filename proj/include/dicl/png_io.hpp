#pragma once

#include <stdexcept>
#include <string>

#include "dicl/image.hpp"

namespace dicl {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Writes an 8-bit RGB PNG. Output bytes are a pure function of the pixels
/// (fixed filter/compression settings), so files can be hashed for identity.
void write_png(const std::string& path, const ImageU8& img);

/// Reads an 8-bit RGB PNG; throws IoError on missing or malformed files.
ImageU8 read_png(const std::string& path);

}  // namespace dicl
