#pragma once

#include <string>
#include <string_view>

namespace splitleak::csv {

/// Nine significant digits, shortest of fixed/scientific.
std::string real(double v);

/// RFC 4180 field: quoted only when it holds a comma, quote or line break.
std::string field(std::string_view text);

}  // namespace splitleak::csv
