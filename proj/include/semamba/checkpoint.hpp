// Copyright 2026 semamba authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "semamba/models.hpp"
#include "semamba/tensor.hpp"

namespace semamba {

// Checkpoint layout:
//   bytes 0..7    magic "SEMAMBA1"
//   bytes 8..11   version, u32 LE
//   bytes 12..15  header length, u32 LE
//   ...           JSON header (kind, config, step, seed, blob tables)
//   ...           raw little-endian float32 blobs
//   last 4        CRC32 over everything above, u32 LE
//
// Training rounds parameters and optimizer moments to float32 after every
// update, so the float32 blobs are lossless and a resumed run replays the
// original trajectory bit for bit.

constexpr char kCheckpointMagic[9] = "SEMAMBA1";
constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

inline uint32_t crc32(const uint8_t* data, size_t len) {
  static uint32_t table[256];
  static bool ready = false;
  if (!ready) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    ready = true;
  }
  uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}

inline uint32_t get_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config <-> JSON
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const StftConfig& c) {
  return {{"n_fft", c.n_fft},
          {"hop", c.hop},
          {"win_len", c.win_len},
          {"sample_rate", c.sample_rate}};
}

inline StftConfig stft_from_json(const nlohmann::json& j) {
  StftConfig c;
  c.n_fft = j.at("n_fft").get<long>();
  c.hop = j.at("hop").get<long>();
  c.win_len = j.at("win_len").get<long>();
  c.sample_rate = j.at("sample_rate").get<double>();
  return c;
}

inline nlohmann::json to_json(const BasicModelConfig& c) {
  return {{"causal", c.causal},
          {"enc_channels", c.enc_channels},
          {"enc_freq_stride", c.enc_freq_stride},
          {"enc_kernel", c.enc_kernel},
          {"d_model", c.d_model},
          {"n_mamba", c.n_mamba},
          {"d_state", c.d_state},
          {"expand", c.expand},
          {"conv_kernel", c.conv_kernel},
          {"stft", to_json(c.stft)},
          {"compression",
           c.compression == Compression::kLog1p ? "log1p" : "power"},
          {"power_c", c.power_c}};
}

inline BasicModelConfig basic_from_json(const nlohmann::json& j) {
  BasicModelConfig c;
  c.causal = j.at("causal").get<bool>();
  auto ch = j.at("enc_channels");
  auto st = j.at("enc_freq_stride");
  for (int i = 0; i < 4; ++i) {
    c.enc_channels[size_t(i)] = ch.at(size_t(i)).get<long>();
    c.enc_freq_stride[size_t(i)] = st.at(size_t(i)).get<long>();
  }
  c.enc_kernel = j.at("enc_kernel").get<long>();
  c.d_model = j.at("d_model").get<long>();
  c.n_mamba = j.at("n_mamba").get<long>();
  c.d_state = j.at("d_state").get<long>();
  c.expand = j.at("expand").get<long>();
  c.conv_kernel = j.at("conv_kernel").get<long>();
  c.stft = stft_from_json(j.at("stft"));
  c.compression = j.at("compression").get<std::string>() == "log1p"
                      ? Compression::kLog1p
                      : Compression::kPower;
  c.power_c = j.at("power_c").get<double>();
  return c;
}

inline nlohmann::json to_json(const AdvancedModelConfig& c) {
  return {{"bidirectional", c.bidirectional},
          {"channels", c.channels},
          {"dense_layers", c.dense_layers},
          {"n_tf", c.n_tf},
          {"d_state", c.d_state},
          {"expand", c.expand},
          {"conv_kernel", c.conv_kernel},
          {"stft", to_json(c.stft)},
          {"power_c", c.power_c}};
}

inline AdvancedModelConfig advanced_from_json(const nlohmann::json& j) {
  AdvancedModelConfig c;
  c.bidirectional = j.at("bidirectional").get<bool>();
  c.channels = j.at("channels").get<long>();
  c.dense_layers = j.at("dense_layers").get<long>();
  c.n_tf = j.at("n_tf").get<long>();
  c.d_state = j.at("d_state").get<long>();
  c.expand = j.at("expand").get<long>();
  c.conv_kernel = j.at("conv_kernel").get<long>();
  c.stft = stft_from_json(j.at("stft"));
  c.power_c = j.at("power_c").get<double>();
  return c;
}

inline nlohmann::json to_json(const ModelSpec& s) {
  nlohmann::json j;
  j["kind"] = s.kind;
  if (s.kind == "basic")
    j["config"] = to_json(s.basic);
  else
    j["config"] = to_json(s.advanced);
  return j;
}

inline ModelSpec model_spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.kind = j.at("kind").get<std::string>();
  if (s.kind == "basic")
    s.basic = basic_from_json(j.at("config"));
  else if (s.kind == "advanced")
    s.advanced = advanced_from_json(j.at("config"));
  else
    throw ConfigError("unknown model kind '" + s.kind + "'");
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoint value type + I/O
// ---------------------------------------------------------------------------

struct Checkpoint {
  std::string kind;
  nlohmann::json config;
  long step = 0;
  uint64_t seed = 0;
  struct Blob {
    std::string name;
    Shape shape;
    std::vector<float> data;
  };
  std::vector<Blob> params;
  std::vector<Blob> opt_state;
};

namespace detail {

inline nlohmann::json blob_table(const std::vector<Checkpoint::Blob>& blobs,
                                 size_t& offset) {
  nlohmann::json t = nlohmann::json::array();
  for (const auto& b : blobs) {
    t.push_back({{"name", b.name},
                 {"shape", b.shape},
                 {"offset", offset},
                 {"count", b.data.size()}});
    offset += b.data.size();
  }
  return t;
}

inline std::vector<Checkpoint::Blob> read_blobs(const nlohmann::json& table,
                                                const uint8_t* blob_base,
                                                size_t blob_floats) {
  std::vector<Checkpoint::Blob> out;
  for (const auto& e : table) {
    Checkpoint::Blob b;
    b.name = e.at("name").get<std::string>();
    b.shape = e.at("shape").get<Shape>();
    size_t off = e.at("offset").get<size_t>();
    size_t count = e.at("count").get<size_t>();
    if (long(count) != numel(b.shape) || off + count > blob_floats)
      throw IoError("checkpoint: blob table inconsistent for '" + b.name + "'");
    b.data.resize(count);
    std::memcpy(b.data.data(), blob_base + off * sizeof(float),
                count * sizeof(float));
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  size_t offset = 0;
  nlohmann::json header;
  header["kind"] = ck.kind;
  header["config"] = ck.config;
  header["step"] = ck.step;
  header["seed"] = ck.seed;
  header["params"] = detail::blob_table(ck.params, offset);
  header["opt_state"] = detail::blob_table(ck.opt_state, offset);
  std::string hs = header.dump();

  std::vector<uint8_t> bytes;
  bytes.insert(bytes.end(), kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_u32(bytes, kCheckpointVersion);
  detail::put_u32(bytes, uint32_t(hs.size()));
  bytes.insert(bytes.end(), hs.begin(), hs.end());
  auto append_blobs = [&](const std::vector<Checkpoint::Blob>& blobs) {
    for (const auto& b : blobs) {
      size_t at = bytes.size();
      bytes.resize(at + b.data.size() * sizeof(float));
      std::memcpy(bytes.data() + at, b.data.data(),
                  b.data.size() * sizeof(float));
    }
  };
  append_blobs(ck.params);
  append_blobs(ck.opt_state);
  detail::put_u32(bytes, detail::crc32(bytes.data(), bytes.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), long(bytes.size()));
  if (!out) throw IoError("checkpoint: short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 20) throw IoError("checkpoint: truncated file");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw IoError("checkpoint: bad magic, not a version-" +
                  std::to_string(kCheckpointVersion) + " checkpoint");
  uint32_t version = detail::get_u32(bytes.data() + 8);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  uint32_t crc_stored = detail::get_u32(bytes.data() + bytes.size() - 4);
  uint32_t crc_actual = detail::crc32(bytes.data(), bytes.size() - 4);
  if (crc_stored != crc_actual) throw IoError("checkpoint: CRC mismatch");
  uint32_t hlen = detail::get_u32(bytes.data() + 12);
  if (16 + size_t(hlen) + 4 > bytes.size())
    throw IoError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + hlen);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: bad header: ") + e.what());
  }
  const uint8_t* blob_base = bytes.data() + 16 + hlen;
  size_t blob_floats = (bytes.size() - 4 - 16 - hlen) / sizeof(float);

  Checkpoint ck;
  try {
    ck.kind = header.at("kind").get<std::string>();
    ck.config = header.at("config");
    ck.step = header.at("step").get<long>();
    ck.seed = header.at("seed").get<uint64_t>();
    ck.params = detail::read_blobs(header.at("params"), blob_base, blob_floats);
    ck.opt_state =
        detail::read_blobs(header.at("opt_state"), blob_base, blob_floats);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: bad header: ") + e.what());
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Model <-> checkpoint
// ---------------------------------------------------------------------------

inline Checkpoint::Blob blob_from_tensor(const std::string& name,
                                         const Tensor& t) {
  Checkpoint::Blob b;
  b.name = name;
  b.shape = t.shape();
  b.data.resize(size_t(t.size()));
  for (long i = 0; i < t.size(); ++i) b.data[size_t(i)] = float(t.data()[i]);
  return b;
}

inline Checkpoint make_checkpoint(const ModelSpec& spec,
                                  const std::vector<NamedTensor>& params,
                                  const std::vector<NamedTensor>& opt_state,
                                  long step, uint64_t seed) {
  Checkpoint ck;
  ck.kind = spec.kind;
  ck.config = to_json(spec).at("config");
  ck.step = step;
  ck.seed = seed;
  for (const auto& p : params) ck.params.push_back(blob_from_tensor(p.name, p.tensor));
  for (const auto& p : opt_state)
    ck.opt_state.push_back(blob_from_tensor(p.name, p.tensor));
  return ck;
}

// Copies checkpoint blobs into the model's parameter registry. Every
// inventory name must appear exactly once, nothing extra.
inline void restore_params(const Checkpoint& ck,
                           const std::vector<NamedTensor>& params) {
  std::map<std::string, const Checkpoint::Blob*> by_name;
  for (const auto& b : ck.params) {
    if (!by_name.emplace(b.name, &b).second)
      throw IoError("checkpoint: duplicate parameter '" + b.name + "'");
  }
  if (by_name.size() != params.size())
    throw IoError("checkpoint: expected " + std::to_string(params.size()) +
                  " parameters, file has " + std::to_string(by_name.size()));
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end())
      throw IoError("checkpoint: missing parameter '" + p.name + "'");
    const Checkpoint::Blob* b = it->second;
    if (b->shape != p.tensor.shape())
      throw IoError("checkpoint: shape mismatch for '" + p.name + "'");
    Tensor t = p.tensor;
    for (long i = 0; i < t.size(); ++i) t.data()[i] = double(b->data[size_t(i)]);
  }
}

inline ModelSpec spec_from_checkpoint(const Checkpoint& ck) {
  nlohmann::json j;
  j["kind"] = ck.kind;
  j["config"] = ck.config;
  return model_spec_from_json(j);
}

inline BasicModel restore_basic(const Checkpoint& ck) {
  if (ck.kind != "basic")
    throw ConfigError("checkpoint holds a '" + ck.kind +
                      "' model, expected 'basic'");
  ModelSpec spec = spec_from_checkpoint(ck);
  BasicModel m = BasicModel::init(spec.basic, ck.seed);
  restore_params(ck, m.parameters());
  return m;
}

inline AdvancedModel restore_advanced(const Checkpoint& ck) {
  if (ck.kind != "advanced")
    throw ConfigError("checkpoint holds a '" + ck.kind +
                      "' model, expected 'advanced'");
  ModelSpec spec = spec_from_checkpoint(ck);
  AdvancedModel m = AdvancedModel::init(spec.advanced, ck.seed);
  restore_params(ck, m.parameters());
  return m;
}

}  // namespace semamba
