#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fuse3d/config.hpp"
#include "fuse3d/model.hpp"

namespace fuse3d {

static_assert(std::endian::native == std::endian::little,
              "H3CK io assumes a little-endian host");

// H3CK checkpoint layout, little-endian throughout:
//   "H3CK" | u32 manifest length | manifest JSON | blobs
// manifest: {"config": <flat model config>, "iteration": i, "val_score": s}
// blob, one per parameter in registration order:
//   u32 name length | name | u32 rank | u32 dims[rank] | f32 values

namespace detail {

inline void ck_put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

struct CkReader {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    FUSE3D_CHECK_DATA(pos + n <= bytes.size(), "truncated checkpoint (",
                      what, ")");
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + pos, 4);
    pos += 4;
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Model<float>& m,
                            std::int64_t iteration, double val_score) {
  const nlohmann::json manifest = {{"config", model_config_json(m.cfg)},
                                   {"iteration", iteration},
                                   {"val_score", val_score}};
  const std::string header = manifest.dump();
  std::string out = "H3CK";
  detail::ck_put_u32(out, std::uint32_t(header.size()));
  out += header;
  for (const auto& e : m.params.entries()) {
    detail::ck_put_u32(out, std::uint32_t(e.name.size()));
    out += e.name;
    detail::ck_put_u32(out, std::uint32_t(e.tensor.rank()));
    for (std::size_t d = 0; d < e.tensor.rank(); ++d)
      detail::ck_put_u32(out, std::uint32_t(e.tensor.dim(d)));
    const std::size_t off = out.size();
    out.resize(off + e.tensor.size() * 4);
    std::memcpy(out.data() + off, e.tensor.data(), e.tensor.size() * 4);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  FUSE3D_CHECK_DATA(f.good(), "cannot open '", path, "' for writing");
  f.write(out.data(), std::streamsize(out.size()));
  FUSE3D_CHECK_DATA(f.good(), "short write to '", path, "'");
}

struct CheckpointMeta {
  ModelConfig config;
  std::int64_t iteration = 0;
  double val_score = -1.0;
};

// Rebuilds the model from the manifest config, then overwrites every
// parameter from its blob. Blob order, names, and shapes must match the
// registration order exactly.
inline Model<float> load_checkpoint(const std::string& path,
                                    CheckpointMeta* meta = nullptr) {
  std::ifstream f(path, std::ios::binary);
  FUSE3D_CHECK_DATA(f.good(), "cannot open checkpoint '", path, "'");
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  detail::CkReader r{bytes};
  FUSE3D_CHECK_DATA(r.str(4, "magic") == "H3CK", "'", path,
                    "' is not an H3CK checkpoint");
  const std::uint32_t hlen = r.u32("manifest length");
  const std::string header = r.str(hlen, "manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    raise<DataError>("malformed checkpoint manifest: ", e.what());
  }
  FUSE3D_CHECK_DATA(manifest.is_object() && manifest.contains("config") &&
                        manifest.contains("iteration") &&
                        manifest.contains("val_score") &&
                        manifest.size() == 3,
                    "checkpoint manifest must hold exactly config, "
                    "iteration, val_score");
  FUSE3D_CHECK_DATA(manifest["iteration"].is_number_integer() &&
                        manifest["val_score"].is_number(),
                    "checkpoint manifest field types are wrong");
  Model<float> m = build_model<float>(model_config_from_json(manifest["config"]));
  if (meta) {
    meta->config = m.cfg;
    meta->iteration = manifest["iteration"].get<std::int64_t>();
    meta->val_score = manifest["val_score"].get<double>();
  }
  for (auto& e : m.params.entries()) {
    const std::uint32_t nlen = r.u32("param name length");
    const std::string name = r.str(nlen, "param name");
    FUSE3D_CHECK_DATA(name == e.name, "checkpoint param order mismatch: got '",
                      name, "', expected '", e.name, "'");
    const std::uint32_t rank = r.u32("param rank");
    FUSE3D_CHECK_DATA(rank == e.tensor.rank(), "checkpoint param '", name,
                      "' rank mismatch");
    for (std::size_t d = 0; d < rank; ++d)
      FUSE3D_CHECK_DATA(r.u32("param dim") == e.tensor.dim(d),
                        "checkpoint param '", name, "' shape mismatch");
    r.need(e.tensor.size() * 4, "param values");
    std::memcpy(e.tensor.data(), bytes.data() + r.pos, e.tensor.size() * 4);
    r.pos += e.tensor.size() * 4;
  }
  FUSE3D_CHECK_DATA(r.pos == bytes.size(),
                    "checkpoint has trailing bytes after the last param");
  return m;
}

}  // namespace fuse3d
