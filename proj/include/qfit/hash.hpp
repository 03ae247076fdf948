#pragma once

#include <span>
#include <string>
#include <string_view>

namespace qfit {

std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const double> values);

}  // namespace qfit
