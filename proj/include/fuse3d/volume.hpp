#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fuse3d/error.hpp"
#include "fuse3d/tensor.hpp"

namespace fuse3d {

static_assert(std::endian::native == std::endian::little,
              "H3V I/O assumes a little-endian host");

enum class Kind { kCt, kPet, kMask, kProb };

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::kCt: return "ct";
    case Kind::kPet: return "pet";
    case Kind::kMask: return "mask";
    case Kind::kProb: return "prob";
  }
  raise("kind_name: invalid kind");
}

inline Kind kind_from_name(const std::string& s) {
  if (s == "ct") return Kind::kCt;
  if (s == "pet") return Kind::kPet;
  if (s == "mask") return Kind::kMask;
  if (s == "prob") return Kind::kProb;
  raise<DataError>("h3v: unknown kind '", s, "'");
}

// Axis order convention: world vectors (origin, spacing, grid size) are
// (x, y, z); voxel storage is [D,H,W] = (z, y, x) with x fastest.
struct GridSpec {
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<std::size_t, 3> size{1, 1, 1};
};

inline bool grids_match(const GridSpec& a, const GridSpec& b,
                        double tol = 1e-9) {
  for (int i = 0; i < 3; ++i) {
    if (a.size[i] != b.size[i]) return false;
    if (std::abs(a.origin[i] - b.origin[i]) > tol) return false;
    if (std::abs(a.spacing[i] - b.spacing[i]) > tol) return false;
  }
  return true;
}

struct Volume {
  Tensor<float> voxels;  // rank 3, [D,H,W]
  std::array<double, 3> origin{0.0, 0.0, 0.0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::array<double, 9> direction{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  Kind kind = Kind::kCt;

  std::size_t nx() const { return voxels.dim(2); }
  std::size_t ny() const { return voxels.dim(1); }
  std::size_t nz() const { return voxels.dim(0); }

  GridSpec grid() const { return GridSpec{origin, spacing, {nx(), ny(), nz()}}; }
};

namespace detail {

inline bool direction_orthonormal(const std::array<double, 9>& d,
                                  double tol = 1e-6) {
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      double dot = 0.0;
      for (int r = 0; r < 3; ++r) dot += d[r * 3 + a] * d[r * 3 + b];
      if (std::abs(dot - (a == b ? 1.0 : 0.0)) > tol) return false;
    }
  return true;
}

inline bool direction_identity(const std::array<double, 9>& d,
                               double tol = 1e-6) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (std::abs(d[r * 3 + c] - (r == c ? 1.0 : 0.0)) > tol) return false;
  return true;
}

inline void check_mask_labels(const Tensor<float>& t) {
  for (float v : t.values())
    FUSE3D_CHECK_DATA(v == 0.0f || v == 1.0f || v == 2.0f,
                      "h3v: mask voxel value out of range: ", v);
}

}  // namespace detail

// Reorders voxels so that direction becomes the identity. The direction must
// be a signed permutation; anything oblique is rejected.
inline Volume canonicalize(const Volume& v) {
  FUSE3D_CHECK_DATA(detail::direction_orthonormal(v.direction),
                    "h3v: direction is not orthonormal");
  if (detail::direction_identity(v.direction)) return v;

  int world_axis[3];  // per voxel axis j: which world axis its column hits
  int sign[3];
  bool taken[3] = {false, false, false};
  for (int j = 0; j < 3; ++j) {
    int w = -1;
    for (int r = 0; r < 3; ++r) {
      const double e = v.direction[r * 3 + j];
      if (std::abs(std::abs(e) - 1.0) <= 1e-6) {
        w = r;
        sign[j] = e > 0 ? 1 : -1;
      } else {
        FUSE3D_CHECK_DATA(std::abs(e) <= 1e-6,
                          "h3v: direction is not axis-aligned");
      }
    }
    FUSE3D_CHECK_DATA(w >= 0 && !taken[w], "h3v: direction is not axis-aligned");
    taken[w] = true;
    world_axis[j] = w;
  }

  const std::size_t n[3] = {v.nx(), v.ny(), v.nz()};
  std::array<double, 3> origin{};
  std::array<double, 3> spacing{};
  std::size_t m[3];  // canonical size per world axis
  for (int j = 0; j < 3; ++j) {
    const int w = world_axis[j];
    m[w] = n[j];
    spacing[w] = v.spacing[j];
    origin[w] = sign[j] > 0
                    ? v.origin[w]
                    : v.origin[w] - v.spacing[j] * double(n[j] - 1);
  }

  Volume out;
  out.voxels = Tensor<float>::zeros({m[2], m[1], m[0]});
  out.origin = origin;
  out.spacing = spacing;
  out.kind = v.kind;
  const float* src = v.voxels.data();
  float* dst = out.voxels.data();
  for (std::size_t iz = 0; iz < n[2]; ++iz)
    for (std::size_t iy = 0; iy < n[1]; ++iy)
      for (std::size_t ix = 0; ix < n[0]; ++ix) {
        const std::size_t idx_in[3] = {ix, iy, iz};
        std::size_t c[3];  // canonical (x,y,z) index
        for (int j = 0; j < 3; ++j) {
          const int w = world_axis[j];
          c[w] = sign[j] > 0 ? idx_in[j] : n[j] - 1 - idx_in[j];
        }
        dst[(c[2] * m[1] + c[1]) * m[0] + c[0]] =
            src[(iz * n[1] + iy) * n[0] + ix];
      }
  return out;
}

inline Volume read_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  FUSE3D_CHECK_DATA(in.good(), "h3v: cannot open ", path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  FUSE3D_CHECK_DATA(bytes.size() >= 8, "h3v: truncated file");
  FUSE3D_CHECK_DATA(std::memcmp(bytes.data(), "H3V1", 4) == 0, "h3v: bad magic");

  std::uint32_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 4, 4);
  FUSE3D_CHECK_DATA(bytes.size() >= 8 + std::size_t(header_len),
                    "h3v: truncated header");

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin() + 8,
                              bytes.begin() + 8 + header_len);
  } catch (const nlohmann::json::exception& e) {
    raise<DataError>("h3v: malformed header JSON: ", e.what());
  }
  FUSE3D_CHECK_DATA(h.is_object(), "h3v: malformed header JSON: not an object");

  static const char* kFields[] = {"size",      "spacing", "origin",
                                  "direction", "dtype",   "kind"};
  for (const char* f : kFields)
    FUSE3D_CHECK_DATA(h.contains(f), "h3v: missing header field '", f, "'");
  for (const auto& item : h.items()) {
    bool known = false;
    for (const char* f : kFields) known = known || item.key() == f;
    FUSE3D_CHECK_DATA(known, "h3v: unexpected header field '", item.key(), "'");
  }

  Volume v;
  try {
    const auto size = h.at("size").get<std::vector<std::uint64_t>>();
    const auto spacing = h.at("spacing").get<std::vector<double>>();
    const auto origin = h.at("origin").get<std::vector<double>>();
    const auto dir = h.at("direction").get<std::vector<double>>();
    const auto dtype = h.at("dtype").get<std::string>();
    v.kind = kind_from_name(h.at("kind").get<std::string>());

    FUSE3D_CHECK_DATA(size.size() == 3 && spacing.size() == 3 &&
                          origin.size() == 3 && dir.size() == 9,
                      "h3v: header field has wrong arity");
    for (auto s : size)
      FUSE3D_CHECK_DATA(s >= 1 && s <= 0xFFFFFFFFull, "h3v: invalid size");
    for (auto s : spacing)
      FUSE3D_CHECK_DATA(s > 0.0 && std::isfinite(s), "h3v: invalid spacing");
    for (int i = 0; i < 3; ++i) {
      v.origin[i] = origin[i];
      v.spacing[i] = spacing[i];
    }
    for (int i = 0; i < 9; ++i) v.direction[i] = dir[i];

    const std::size_t count = std::size_t(size[0]) * size[1] * size[2];
    const std::size_t elem = dtype == "f32" ? 4 : dtype == "u8" ? 1 : 0;
    FUSE3D_CHECK_DATA(elem != 0, "h3v: invalid dtype '", dtype, "'");
    const std::size_t have = bytes.size() - 8 - header_len;
    FUSE3D_CHECK_DATA(have >= count * elem, "h3v: truncated payload");
    FUSE3D_CHECK_DATA(have == count * elem, "h3v: payload size mismatch");

    std::vector<float> data(count);
    const char* payload = bytes.data() + 8 + header_len;
    if (elem == 4) {
      std::memcpy(data.data(), payload, count * 4);
    } else {
      for (std::size_t i = 0; i < count; ++i)
        data[i] = float(std::uint8_t(payload[i]));
    }
    v.voxels = Tensor<float>::from({size[2], size[1], size[0]},
                                   std::move(data));
  } catch (const nlohmann::json::exception& e) {
    raise<DataError>("h3v: malformed header JSON: ", e.what());
  }

  if (v.kind == Kind::kMask) detail::check_mask_labels(v.voxels);
  return canonicalize(v);
}

inline void write_volume(const Volume& v, const std::string& path) {
  FUSE3D_CHECK(v.voxels.rank() == 3, "h3v: voxels must be rank 3, got shape ",
               shape_str(v.voxels.shape()));
  for (double s : v.spacing)
    FUSE3D_CHECK(s > 0.0 && std::isfinite(s), "h3v: invalid spacing");
  FUSE3D_CHECK(detail::direction_orthonormal(v.direction),
               "h3v: direction is not orthonormal");
  if (v.kind == Kind::kMask) detail::check_mask_labels(v.voxels);

  nlohmann::json h;
  h["size"] = {std::uint32_t(v.nx()), std::uint32_t(v.ny()),
               std::uint32_t(v.nz())};
  h["spacing"] = v.spacing;
  h["origin"] = v.origin;
  h["direction"] = v.direction;
  h["dtype"] = v.kind == Kind::kMask ? "u8" : "f32";
  h["kind"] = kind_name(v.kind);
  const std::string header = h.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  FUSE3D_CHECK_DATA(out.good(), "h3v: cannot open ", path);
  out.write("H3V1", 4);
  const std::uint32_t header_len = std::uint32_t(header.size());
  out.write(reinterpret_cast<const char*>(&header_len), 4);
  out.write(header.data(), std::streamsize(header.size()));

  const std::size_t count = v.voxels.size();
  if (v.kind == Kind::kMask) {
    std::vector<std::uint8_t> raw(count);
    for (std::size_t i = 0; i < count; ++i)
      raw[i] = std::uint8_t(v.voxels.data()[i]);
    out.write(reinterpret_cast<const char*>(raw.data()),
              std::streamsize(count));
  } else {
    out.write(reinterpret_cast<const char*>(v.voxels.data()),
              std::streamsize(count * 4));
  }
  out.flush();
  FUSE3D_CHECK_DATA(out.good(), "h3v: write failed for ", path);
}

}  // namespace fuse3d
