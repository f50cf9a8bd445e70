#include "repaintlab/ndcore/ndt.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace repaintlab::nd {

namespace {

constexpr std::array<char, 4> kMagic{'N', 'D', 'T', '1'};

template <typename U>
void put_le(std::ostream& os, U value) {
  std::array<unsigned char, sizeof(U)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(U))) throw DataError("NDT1: truncated record");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  U value;
  std::memcpy(&value, bytes.data(), sizeof(U));
  return value;
}

template <typename T>
NdArray<T> read_payload(std::istream& is, Shape shape) {
  NdArray<T> out(std::move(shape));
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(T)))) {
      throw DataError("NDT1: truncated payload");
    }
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_le<T>(is);
  }
  return out;
}

}  // namespace

template <typename T>
void write_ndt(std::ostream& os, const NdArray<T>& array) {
  if (array.rank() > 255) throw Error("NDT1: rank exceeds 255");
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(array.rank()));
  for (std::size_t extent : array.shape()) {
    if (extent > 0xffffffffULL) throw Error("NDT1: extent exceeds u32");
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(extent));
  }
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype_of<T>()));
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(array.data()), static_cast<std::streamsize>(array.size() * sizeof(T)));
  } else {
    for (std::size_t i = 0; i < array.size(); ++i) put_le<T>(os, array[i]);
  }
  if (!os) throw DataError("NDT1: write failed");
}

AnyArray read_ndt_any(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw DataError("NDT1: bad magic");
  const auto rank = get_le<std::uint8_t>(is);
  Shape shape(rank);
  for (auto& extent : shape) extent = get_le<std::uint32_t>(is);
  const auto tag = get_le<std::uint8_t>(is);
  switch (tag) {
    case 0:
      return read_payload<float>(is, std::move(shape));
    case 1:
      return read_payload<double>(is, std::move(shape));
    default:
      throw DataError("NDT1: unknown dtype tag " + std::to_string(tag));
  }
}

template <typename T>
NdArray<T> read_ndt(std::istream& is) {
  auto any = read_ndt_any(is);
  if (auto* a = std::get_if<NdArray<T>>(&any)) return std::move(*a);
  throw DataError("NDT1: dtype mismatch");
}

template <typename T>
void save_ndt(const std::filesystem::path& path, const NdArray<T>& array) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_ndt(os, array);
}

template <typename T>
NdArray<T> load_ndt(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read_ndt<T>(is);
}

template <typename T>
void write_param_bundle(std::ostream& os, const ParamMap<T>& params) {
  for (const auto& [name, array] : params) {
    if (name.size() > 0xffff) throw Error("parameter path too long: " + name);
    put_le<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_ndt(os, array);
  }
}

template <typename T>
ParamMap<T> read_param_bundle(std::istream& is) {
  ParamMap<T> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = get_le<std::uint16_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("param bundle: truncated path");
    if (!out.emplace(name, read_ndt<T>(is)).second) throw DataError("param bundle: duplicate path " + name);
  }
  return out;
}

template <typename T>
void save_param_bundle(const std::filesystem::path& path, const ParamMap<T>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_param_bundle(os, params);
  if (!os) throw DataError("write failed: " + path.string());
}

template <typename T>
ParamMap<T> load_param_bundle(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read_param_bundle<T>(is);
}

#define REPAINTLAB_INSTANTIATE(T)                                                      \
  template void write_ndt(std::ostream&, const NdArray<T>&);                           \
  template NdArray<T> read_ndt(std::istream&);                                         \
  template void save_ndt(const std::filesystem::path&, const NdArray<T>&);             \
  template NdArray<T> load_ndt(const std::filesystem::path&);                          \
  template void write_param_bundle(std::ostream&, const ParamMap<T>&);                 \
  template ParamMap<T> read_param_bundle(std::istream&);                               \
  template void save_param_bundle(const std::filesystem::path&, const ParamMap<T>&);   \
  template ParamMap<T> load_param_bundle(const std::filesystem::path&);

REPAINTLAB_INSTANTIATE(float)
REPAINTLAB_INSTANTIATE(double)

#undef REPAINTLAB_INSTANTIATE

}  // namespace repaintlab::nd
