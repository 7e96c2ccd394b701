#include "srt/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "srt/lk.hpp"

namespace srt {

std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_pf2(std::ostream& os, const ScalarField& field) {
  os << "PF2 " << field.width() << ' ' << field.height() << '\n';
  for (int r = 0; r < field.height(); ++r) {
    for (int c = 0; c < field.width(); ++c) {
      if (c) os << ' ';
      os << format_g17(field.at(r, c));
    }
    os << '\n';
  }
}

ScalarField read_pf2(std::istream& is) {
  std::string magic;
  int w = 0;
  int h = 0;
  if (!(is >> magic >> w >> h) || magic != "PF2") {
    throw std::runtime_error("not a PF2 stream");
  }
  if (w <= 0 || h <= 0) throw std::runtime_error("bad PF2 dimensions");
  std::vector<double> data(static_cast<size_t>(w) * h);
  for (auto& v : data) {
    if (!(is >> v)) throw std::runtime_error("truncated PF2 stream");
  }
  return ScalarField(h, w, std::move(data));
}

void save_pf2(const std::filesystem::path& path, const ScalarField& field) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  write_pf2(os, field);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

ScalarField load_pf2(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  return read_pf2(is);
}

void write_flow(std::ostream& os, const FlowField& flow) {
  os << "FLOW\n";
  write_pf2(os, flow.u);
  write_pf2(os, flow.v);
}

FlowField read_flow(std::istream& is) {
  std::string magic;
  if (!(is >> magic) || magic != "FLOW") {
    throw std::runtime_error("not a FLOW stream");
  }
  ScalarField u = read_pf2(is);
  ScalarField v = read_pf2(is);
  return FlowField(std::move(u), std::move(v));
}

void save_flow(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  write_flow(os, flow);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

FlowField load_flow(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  return read_flow(is);
}

}  // namespace srt
