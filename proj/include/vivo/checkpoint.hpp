#pragma once

#include "vivo/encoder.hpp"

#include <map>
#include <string>

namespace vivo {

/// On-disk model state: a text manifest (config, name -> shape -> byte
/// offset) followed by a raw little-endian float64 payload, row-major per
/// array. See docs/FORMATS.md for the byte-exact layout. Extras carry
/// anything beyond the model itself (optimizer moments, step counters).
struct Checkpoint {
  EncoderConfig config;
  Parameters params;
  std::map<std::string, Matrix> extras;
  std::map<std::string, double> scalars;
};

// Atomic: writes a temp file and renames into place.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

// Throws CorruptCheckpoint on bad magic, manifest/shape inconsistencies or
// a truncated payload; IoError when the file cannot be read at all.
Checkpoint load_checkpoint(const std::string& path);

// As above, additionally requiring the stored config to equal `expected`
// (shape diagnostics in the error message otherwise).
Checkpoint load_checkpoint(const std::string& path,
                           const EncoderConfig& expected);

}  // namespace vivo
