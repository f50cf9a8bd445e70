#pragma once

// NDT1 raw tensor records:
//   "NDT1" | u8 rank | rank x u32 LE extents | u8 dtype (0 f32, 1 f64) | LE payload
// A parameter bundle is a sequence of (u16 LE path length, UTF-8 path, NDT1 record).

#include <filesystem>
#include <iosfwd>
#include <string>
#include <variant>

#include "repaintlab/ndcore/adam.hpp"
#include "repaintlab/ndcore/ndarray.hpp"

namespace repaintlab::nd {

using AnyArray = std::variant<NdArray<float>, NdArray<double>>;

template <typename T>
void write_ndt(std::ostream& os, const NdArray<T>& array);

AnyArray read_ndt_any(std::istream& is);

/// Reads one record and requires its dtype to be T.
template <typename T>
NdArray<T> read_ndt(std::istream& is);

template <typename T>
void save_ndt(const std::filesystem::path& path, const NdArray<T>& array);
template <typename T>
NdArray<T> load_ndt(const std::filesystem::path& path);

template <typename T>
void write_param_bundle(std::ostream& os, const ParamMap<T>& params);
template <typename T>
ParamMap<T> read_param_bundle(std::istream& is);

template <typename T>
void save_param_bundle(const std::filesystem::path& path, const ParamMap<T>& params);
template <typename T>
ParamMap<T> load_param_bundle(const std::filesystem::path& path);

}  // namespace repaintlab::nd
