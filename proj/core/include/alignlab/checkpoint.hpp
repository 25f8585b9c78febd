#pragma once

#include <iosfwd>
#include <string>

#include "alignlab/policy.hpp"

namespace alignlab {

struct LoadedCheckpoint {
  PolicyParams params;
  std::string config_hash;
};

// Text dump: the header line "shape=V,d,k,h;version=INT;confighash=HEX"
// followed by one parameter per line in round-trip precision.
void write_checkpoint(std::ostream& out, const PolicyParams& params,
                      const std::string& config_hash);
void save_checkpoint(const std::string& path, const PolicyParams& params,
                     const std::string& config_hash);

// Throws IncompatibleCheckpointError on a malformed header, a parameter count
// that disagrees with the shape, or non-finite values.
LoadedCheckpoint read_checkpoint(std::istream& in);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace alignlab
