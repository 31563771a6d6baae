#pragma once

#include <iosfwd>
#include <string>

#include "dynlate/panel.hpp"

namespace dynlate {

// CSV schema, header required, column order:
//   s0_0..s0_{p-1}, then for t=1..T-1: z{t}, d{t}, s{t}_0..s{t}_{p-1},
//   then z{T}, d{T}, y
// Values are written as decimal text with 17 significant digits so that
// write-then-read reproduces every double bit-exactly.
std::string panel_csv_header(int T, int p);

void write_panel(const PanelDataset& ds, std::ostream& out);
void write_panel(const PanelDataset& ds, const std::string& path);

// Throws ParseError naming the offending row and column on any malformed
// cell (missing column, non-binary z/d, NaN, unparsable number).
PanelDataset read_panel(std::istream& in);
PanelDataset read_panel(const std::string& path);

}  // namespace dynlate
