#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ngfn/trainer.hpp"

namespace ngfn {

// Single binary container for everything a run persists. Layout, all
// little-endian:
//   magic "NGFN" | u32 version | u32 kind | u64 config_hash
//   | i64 epoch | i64 updates | u32 n_arrays | arrays
// and each array is
//   u32 name_len | name bytes | u32 rank | u64 dims[rank] | f64 payload.
// Doubles round-trip bit-exactly, so save/load of a finetune state resumes
// training on the identical numerical path.
struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;
};

enum : std::uint32_t { kCkptPretrain = 1, kCkptFinetune = 2 };

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint32_t kind = 0;
  std::uint64_t config_hash = 0;
  long epoch = 0;
  long updates = 0;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
  // find, but throws IoError when the array is missing.
  const NamedArray& need(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Pretrained-model container: schedule plus the noise-prediction net.
Checkpoint pack_pretrain(const Mlp& net, const NoiseSchedule& schedule, std::uint64_t config_hash);
void unpack_pretrain(const Checkpoint& ckpt, Mlp& net, NoiseSchedule& schedule);

// Full finetune-state container: schedule, every net with its spec, optimizer
// moments and the previous-epoch trajectory buffer. The config supplies what
// is not state (learning rates); unpack restores counters and buffers so a
// resumed run is bit-identical to an uninterrupted one.
Checkpoint pack_finetune(const FinetuneState& state, const NoiseSchedule& schedule,
                         std::uint64_t config_hash);
FinetuneState unpack_finetune(const Checkpoint& ckpt, const FinetuneConfig& cfg,
                              NoiseSchedule& schedule);

}  // namespace ngfn
