#include "ff/app/commands.hpp"
#include "ff/app/recipes.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace ff::app;
  CLI::App app{"ff: Forward-Forward training, evaluation and figure recipes"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  TrainOptions train_opts;
  auto* train = app.add_subcommand("train", "train a network from a JSON config");
  train->add_option("-c,--config", config_path, "config file (defaults when omitted)");
  train->add_option("-o,--override", overrides, "dotted override, e.g. train.epochs=3")->allow_extra_args(false);
  train->add_option("--data-root", train_opts.data_root, "dataset root directory");
  train->add_option("--output", train_opts.output, "parent directory for run outputs");
  train->add_option("--run-dir", train_opts.run_dir, "exact run directory");
  train->add_option("--resume", train_opts.resume, "checkpoint to resume from");

  EvalOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval->add_option("--checkpoint", eval_opts.checkpoint, "checkpoint file")->required();
  eval->add_option("-c,--config", eval_opts.config, "config (default: config.json beside the checkpoint)");
  eval->add_option("-o,--override", eval_opts.overrides, "dotted override")->allow_extra_args(false);
  eval->add_option("--data-root", eval_opts.data_root, "dataset root directory");
  eval->add_option("--predictions", eval_opts.predictions, "predictions CSV path");
  eval->add_flag("--layerwise", eval_opts.layerwise, "also report per-layer accuracy");

  std::string figure;
  RecipeOptions recipe_opts;
  auto* repro = app.add_subcommand("reproduce", "run a bundled figure or table recipe");
  std::string ids;
  for (const auto& id : figure_ids()) ids += (ids.empty() ? "" : ", ") + id;
  repro->add_option("id", figure, "one of: " + ids)->required();
  repro->add_flag("--quick", recipe_opts.quick, "tiny subsets, one epoch");
  repro->add_option("--data-root", recipe_opts.data_root, "dataset root directory");
  repro->add_option("--output", recipe_opts.output, "parent output directory");
  repro->add_option("--dataset", recipe_opts.dataset, "dataset name (default cifar10 if present, else mnist)");

  InspectOptions inspect_opts;
  auto* inspect = app.add_subcommand("inspect", "print blocks, shapes and parameter counts");
  inspect->add_option("--checkpoint", inspect_opts.checkpoint, "checkpoint file");
  inspect->add_option("-c,--config", inspect_opts.config, "config file");
  inspect->add_option("-o,--override", inspect_opts.overrides, "dotted override")->allow_extra_args(false);
  inspect->add_option("--preset", inspect_opts.preset, "network preset");
  inspect->add_option("--image", inspect_opts.image_shape, "image shape CxHxW");
  inspect->add_option("--classes", inspect_opts.num_classes, "number of classes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*train) return cmd_train(config_path, overrides, train_opts, std::cout, std::cerr);
  if (*eval) return cmd_eval(eval_opts, std::cout, std::cerr);
  if (*repro) return cmd_reproduce(figure, recipe_opts, std::cout, std::cerr);
  return cmd_inspect(inspect_opts, std::cout, std::cerr);
}
