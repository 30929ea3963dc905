#pragma once

#include <string>
#include <vector>

#include "patn/config.hpp"

namespace patn {

/// Subcommand bodies shared by the CLI and by tests. Each writes its outputs
/// plus config.echo.json under out_dir and throws on failure.

void cmd_gen(const RunConfig& cfg, const std::string& out_dir);

void cmd_train(const RunConfig& cfg, const std::string& corpus_base, const std::string& out_dir);

void cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& corpus_base,
              const std::string& split, const std::string& out_dir);

void cmd_sweep_lambda(const RunConfig& cfg, const std::string& corpus_base,
                      const std::vector<double>& lambdas, const std::string& out_dir);

void cmd_project(const RunConfig& cfg, const std::string& checkpoint, const std::string& corpus_base,
                 const std::string& split, const std::string& out_dir);

}  // namespace patn
