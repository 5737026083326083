#pragma once

// Binary model checkpoints.
//
// Layout (all integers little-endian):
//   "DFBENCH1"  u32 version
//   str arch    u64 seed    str config_digest
//   u32 n_meta  { str key  str value }
//   u32 n_tensors { str name  u8 dtype(1 = f64)  u32 rank  u64 dims[rank]  f64 payload[numel] }
//   sha256 of every preceding byte (32 raw bytes)
// where str = u32 length + bytes. Serialization is canonical, so
// save -> load -> save reproduces the file byte for byte.

#include "dfb/attack.hpp"
#include "dfb/detector.hpp"
#include "dfb/encoder.hpp"
#include "dfb/errors.hpp"
#include "dfb/generator.hpp"
#include "dfb/params.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dfb {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string arch;  // "<kind>:v<n>:..." descriptor
    std::uint64_t seed = 0;
    std::string config_digest;
    std::vector<std::pair<std::string, std::string>> metadata;
    ParamSet tensors;

    std::string kind() const;
    const std::string& meta(const std::string& key) const;
};

class CheckpointMismatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
// With a non-empty expected_kind, a checkpoint of another kind is refused.
Checkpoint load_checkpoint(const std::string& path, const std::string& expected_kind = "");
// SHA-256 of the file contents.
std::string checkpoint_file_digest(const std::string& path);

Checkpoint to_checkpoint(const ConditionalGenerator& g, const std::string& config_digest);
Checkpoint to_checkpoint(const FrozenEncoder& enc, const std::string& config_digest);
Checkpoint to_checkpoint(const Detector& d, std::uint64_t seed, const std::string& config_digest);
Checkpoint to_checkpoint(const SurrogateClassifier& m, std::uint64_t seed, const std::string& config_digest);
Checkpoint to_checkpoint(const LowRankAdapter& a, std::uint64_t seed, const std::string& config_digest);

ConditionalGenerator generator_from_checkpoint(const Checkpoint& ckpt);
FrozenEncoder encoder_from_checkpoint(const Checkpoint& ckpt);
// Embedding detectors and surrogates need the encoder they were trained on;
// its checksum must match the one recorded in the checkpoint.
Detector detector_from_checkpoint(const Checkpoint& ckpt, EncoderPtr encoder = nullptr);
SurrogateClassifier surrogate_from_checkpoint(const Checkpoint& ckpt, EncoderPtr encoder);
LowRankAdapter adapter_from_checkpoint(const Checkpoint& ckpt);

}  // namespace dfb
