#pragma once

#include <stdexcept>
#include <string>

namespace dlfs {

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define DLFS_ERROR_TYPE(Name)                                        \
  struct Name : Error {                                              \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

// tensor core
DLFS_ERROR_TYPE(ShapeMismatch);
DLFS_ERROR_TYPE(AxisOutOfRange);
DLFS_ERROR_TYPE(BadMagic);
DLFS_ERROR_TYPE(DtypeUnsupported);
DLFS_ERROR_TYPE(TruncatedFile);
DLFS_ERROR_TYPE(BadParam);
// layers
DLFS_ERROR_TYPE(KernelTooLarge);
DLFS_ERROR_TYPE(BadOutputSize);
DLFS_ERROR_TYPE(LabelOutOfRange);
DLFS_ERROR_TYPE(BadHyperparam);
// local feature selection
DLFS_ERROR_TYPE(DivisibilityViolation);
DLFS_ERROR_TYPE(CoordOutOfRange);
DLFS_ERROR_TYPE(StaleCache);
// model / data / harness
DLFS_ERROR_TYPE(BadConfig);
DLFS_ERROR_TYPE(PlacementFailure);
DLFS_ERROR_TYPE(IoError);
DLFS_ERROR_TYPE(MissingFile);
DLFS_ERROR_TYPE(BadManifest);
DLFS_ERROR_TYPE(EmptySplit);

#undef DLFS_ERROR_TYPE

}  // namespace dlfs
