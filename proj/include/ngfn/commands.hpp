#pragma once

#include <string>

#include "ngfn/checkpoint.hpp"
#include "ngfn/config.hpp"

namespace ngfn {

struct CmdOptions {
  std::string out_dir;
  std::string checkpoint;  // input checkpoint (finetune / eval / sweep)
  bool force = false;      // accept a checkpoint whose config hash differs
  bool emit_plots = false;
};

// Pretrains the noise-prediction net on the config's dataset and writes
// pretrained.ckpt, a one-row metrics.csv comparing terminal samples with the
// analytic dataset density, and config.txt into the output directory.
void cmd_pretrain(const RunConfig& cfg, const CmdOptions& opts);

// Finetunes starting from opts.checkpoint. A pretrained checkpoint starts a
// fresh run; a finetune checkpoint resumes, continuing to the config's total
// epoch count on the numerical path of the uninterrupted run and appending to
// an existing metrics.csv. Writes ckpt_epoch_<n>.ckpt at every evaluation
// point. The checkpoint's config hash must match the config unless --force.
void cmd_finetune(const RunConfig& cfg, const CmdOptions& opts);

// One evaluation pass of the checkpointed policy: terminal samples, reward,
// diversity, distance to the pretrained reference, density distance to the
// reward-tilted target. Writes eval.csv.
void cmd_eval(const RunConfig& cfg, const CmdOptions& opts);

// Runs cmd_finetune once per setting of a sweep specification
// "key=v1,v2[;key2=w1,w2...]" (cartesian product over clauses), each in its
// own subdirectory, then joins every setting's final metric row into
// pareto.csv.
void cmd_sweep(const RunConfig& cfg, const std::string& sweep_spec, const CmdOptions& opts);

}  // namespace ngfn
