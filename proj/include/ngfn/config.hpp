#pragma once

#include <cstdint>
#include <string>

#include "ngfn/trainer.hpp"

namespace ngfn {

// Everything one experiment needs, loadable from a flat key-value text file.
// One file describes the whole pipeline (schedule, data, reward, losses,
// pretraining, finetuning, evaluation) so the pretrain, finetune and eval
// stages of a run share a single source of truth.
//
// File format: one `section.key = value` per line, `#` starts a comment,
// blank lines are skipped. Values are integers, floats, booleans
// (true/false), enumeration names, or whitespace-separated float lists.
// Unknown keys are rejected. Mode means are flat lists of dim * n_modes
// numbers, mode-major.
struct RunConfig {
  std::uint64_t seed = 1;

  // schedule.*
  int T = 20;
  double beta_min = 0.02;
  double beta_max = 0.3;

  // net.* (in_dim / out_dim are derived from the dataset dimension)
  MlpSpec net;

  // dataset.*
  DatasetSpec dataset;

  // reward.*
  RewardSpec reward;

  // pretrain.*
  PretrainConfig pretrain;

  // train.*, loss.*, baseline.*, eval.batch, eval.samples
  FinetuneConfig train;

  // eval.oracle_dense: dense pretrained sample count behind the target
  // density table used for the target_tv metric; 0 disables the oracle.
  long oracle_dense = 200000;

  RunConfig();

  NoiseSchedule make_schedule() const { return NoiseSchedule::linear_beta(T, beta_min, beta_max); }
  void validate() const;
};

// Parses config text / file into a validated RunConfig. Derived fields
// (reward dimension, per-stage seeds, the baseline method mirror) are filled
// in before validation. Throws ConfigError naming the offending key.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

// Applies one key-value override to an existing config and re-validates;
// the mechanism behind sweep settings and the --seed flag.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Canonical text form: every key in a fixed order, floats in %.17g, so equal
// configs serialize identically and the round-trip through parse_config is
// exact.
std::string serialize_config(const RunConfig& cfg);

// FNV-1a over the canonical form minus the run-length key (train.epochs).
// Extending a run is the expected use of checkpoint resumption, so two
// configs that differ only in total epochs hash alike; everything else about
// the experiment is covered. Finetune checkpoints carry this hash.
std::uint64_t config_hash(const RunConfig& cfg);

// Hash over only the keys a pretrained model depends on (schedule.*, net.*,
// dataset.*, pretrain.*). Pretrained checkpoints carry this one, so the same
// model can seed finetune runs that differ in reward, losses, trainer knobs
// or seed without tripping the compatibility check.
std::uint64_t pretrain_hash(const RunConfig& cfg);

}  // namespace ngfn
