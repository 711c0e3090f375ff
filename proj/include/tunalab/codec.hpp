#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace tunalab {

/// Shortest decimal text that reads back to the same double.
std::string format_number(double value);

std::string base64_encode(std::string_view bytes);
/// Throws InvalidArgument on characters outside the standard alphabet or bad padding.
std::string base64_decode(std::string_view text);

}  // namespace tunalab
