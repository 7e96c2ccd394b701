#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "srt/field.hpp"

namespace srt {

/// Lossless text raster: `PF2 <width> <height>` header line, then one line
/// per row of space-separated decimals at 17 significant digits (doubles
/// round-trip bit-exactly).
void write_pf2(std::ostream& out, const ScalarField& field);
ScalarField read_pf2(std::istream& in);

void save_pf2(const std::filesystem::path& path, const ScalarField& field);
ScalarField load_pf2(const std::filesystem::path& path);

struct FlowField;  // defined in lk.hpp

/// Flow container: a `FLOW` line followed by two PF2 blocks (u then v).
void write_flow(std::ostream& out, const FlowField& flow);
FlowField read_flow(std::istream& in);
void save_flow(const std::filesystem::path& path, const FlowField& flow);
FlowField load_flow(const std::filesystem::path& path);

/// Shortest decimal form that round-trips a double (printf %.17g).
std::string format_g17(double v);

}  // namespace srt
