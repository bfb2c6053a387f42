#pragma once

#include <cstdint>
#include <string>

#include "dlfs/model.hpp"

namespace dlfs {

// Training-run state stored alongside the parameters so a resumed run
// replays the interrupted one exactly (the RNG stream position included).
struct TrainState {
  int64_t epoch = 0;  // epochs completed
  uint64_t rng_base = 0;
  uint64_t rng_counter = 0;
  double best_val_metric = -1.0;
  int64_t best_epoch = -1;
};

// Checkpoint container, bit-exact:
//   manifest: one line per record "name<TAB>offset<LF>" (offset in bytes
//   from the start of the records section), terminated by one empty line;
//   then the records, each a DTEN tensor. Records are the parameter value
//   tensors in sorted path order, with a trailing "__optimizer__" record
//   packing every parameter's Adam state and the TrainState scalars.
void save_checkpoint(const std::string& path, const ModelParams& params, const TrainState& state);

// Restores into an already-constructed ModelParams (shapes must match the
// stored tensors) and returns the train state.
TrainState load_checkpoint(const std::string& path, ModelParams& params);

// Reads one named record's shape without restoring anything (e.g. "fuse.b"
// to learn the class count of a stored model).
std::vector<int64_t> checkpoint_record_shape(const std::string& path, const std::string& name);

}  // namespace dlfs
