#include "alignlab/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <regex>

#include "alignlab/error.hpp"

namespace alignlab {

void write_checkpoint(std::ostream& out, const PolicyParams& params,
                      const std::string& config_hash) {
  const ModelShape& s = params.shape;
  out << "shape=" << s.vocab << ',' << s.embed << ',' << s.context << ',' << s.hidden
      << ";version=" << params.version << ";confighash=" << config_hash << '\n';
  char buf[40];
  for (double v : params.theta) {
    std::snprintf(buf, sizeof buf, "%.17g\n", v);
    out << buf;
  }
}

void save_checkpoint(const std::string& path, const PolicyParams& params,
                     const std::string& config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, params, config_hash);
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

LoadedCheckpoint read_checkpoint(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw IncompatibleCheckpointError("empty checkpoint");
  static const std::regex pattern(
      R"(shape=(\d+),(\d+),(\d+),(\d+);version=(-?\d+);confighash=([0-9a-fA-F]*))");
  std::smatch m;
  if (!std::regex_match(header, m, pattern)) {
    throw IncompatibleCheckpointError("bad checkpoint header '" + header + "'");
  }
  LoadedCheckpoint ck;
  ModelShape& shape = ck.params.shape;
  shape.vocab = std::stoi(m[1]);
  shape.embed = std::stoi(m[2]);
  shape.context = std::stoi(m[3]);
  shape.hidden = std::stoi(m[4]);
  ck.params.version = std::stoll(m[5]);
  ck.config_hash = m[6];
  try {
    shape.validate();
  } catch (const InvalidInputError& e) {
    throw IncompatibleCheckpointError(std::string("checkpoint shape: ") + e.what());
  }

  const std::size_t expected = shape.param_count();
  ck.params.theta.reserve(expected);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc() || ptr != line.data() + line.size()) {
      throw IncompatibleCheckpointError("bad checkpoint value '" + line + "'");
    }
    ck.params.theta.push_back(v);
  }
  if (ck.params.theta.size() != expected) {
    throw IncompatibleCheckpointError("checkpoint holds " +
                                      std::to_string(ck.params.theta.size()) +
                                      " values, shape needs " + std::to_string(expected));
  }
  if (!ck.params.all_finite()) throw IncompatibleCheckpointError("non-finite checkpoint value");
  return ck;
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IncompatibleCheckpointError("cannot read checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace alignlab
