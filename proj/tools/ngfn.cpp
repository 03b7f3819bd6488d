#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ngfn/commands.hpp"

namespace {

struct Args {
  std::string config_path;
  std::string sweep_spec;
  ngfn::CmdOptions opts;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* sub, Args& args, bool needs_checkpoint) {
  sub->add_option("--config", args.config_path, "experiment config file")->required();
  sub->add_option("--out", args.opts.out_dir, "output directory")->required();
  auto* seed = sub->add_option("--seed", args.seed, "override the config seed");
  seed->each([&args](const std::string&) { args.seed_set = true; });
  if (needs_checkpoint) {
    sub->add_option("--checkpoint", args.opts.checkpoint, "input checkpoint")->required();
    sub->add_flag("--force", args.opts.force, "accept a checkpoint with a mismatched config hash");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale diffusion sampler finetuning laboratory"};
  app.require_subcommand(1);
  Args args;

  CLI::App* pre = app.add_subcommand("pretrain", "train the denoiser on the config's dataset");
  add_common(pre, args, false);
  pre->add_flag("--emit-plots", args.opts.emit_plots, "write per-metric SVG charts");

  CLI::App* fin = app.add_subcommand("finetune", "finetune from a pretrained or mid-run checkpoint");
  add_common(fin, args, true);
  fin->add_flag("--emit-plots", args.opts.emit_plots, "write per-metric SVG charts");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpointed policy");
  add_common(ev, args, true);

  CLI::App* sweep = app.add_subcommand("sweep", "finetune once per setting of a sweep grid");
  add_common(sweep, args, true);
  sweep->add_option("--sweep", args.sweep_spec, "grid, e.g. 'loss.beta=1,4,16;seed=1,2,3'")
      ->required();
  sweep->add_flag("--emit-plots", args.opts.emit_plots, "write per-metric SVG charts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    ngfn::RunConfig cfg = ngfn::load_config(args.config_path);
    if (args.seed_set) ngfn::apply_override(cfg, "seed", std::to_string(args.seed));
    if (pre->parsed()) ngfn::cmd_pretrain(cfg, args.opts);
    if (fin->parsed()) ngfn::cmd_finetune(cfg, args.opts);
    if (ev->parsed()) ngfn::cmd_eval(cfg, args.opts);
    if (sweep->parsed()) ngfn::cmd_sweep(cfg, args.sweep_spec, args.opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
