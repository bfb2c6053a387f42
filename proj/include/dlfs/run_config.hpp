#pragma once

#include <string>

#include "dlfs/model.hpp"
#include "dlfs/train.hpp"

namespace dlfs {

// Run configuration file: UTF-8 lines of "key=value". Blank lines and lines
// starting with '#' are ignored; any unknown key is an error, so a parse
// either fails or yields the complete configuration.
//
// Keys (defaults in parentheses):
//   input_size (32)        channels (16,32,32)      num_classes (6)
//   g_dim (64)             vi_pool (2)              scales (16:32;4:32:3:2)
//   lr (1e-4)              lr_decay (0.9)           decay_epochs (80)
//   batch_size (64)        epochs (60)              seed (0)
//   lambda1 (1)            lambda2 (0.1)            lambda3 (0.1)
//   triplet_margin (1)     threads (0 = auto)
//
// "scales" lists pyramid stages as K:C[:kernel:stride], separated by ';'.
// An empty scales value disables the local branch.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::string& path);  // missing file -> MissingFile

}  // namespace dlfs
