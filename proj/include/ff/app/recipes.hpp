#pragma once

#include "ff/app/commands.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace ff::app {

// fig1, fig2, fig4, fig5, fig6, fig7, fig8, table1, table3
const std::vector<std::string>& figure_ids();

struct RecipeOptions {
  std::string data_root;
  std::string output = "output";
  bool quick = false;     // tiny subsets and one epoch; for smoke runs
  std::string dataset;    // empty: cifar10 when present, else mnist
  std::ostream* log = nullptr;
};

struct RecipeResult {
  std::string dir;
  std::vector<std::string> files;  // CSV and SVG outputs, relative to dir
};

// Runs the bundled desk-scale recipe for `id`. Unknown ids throw UsageError.
RecipeResult reproduce(const std::string& id, const RecipeOptions& opts);

int cmd_reproduce(const std::string& id, const RecipeOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace ff::app
