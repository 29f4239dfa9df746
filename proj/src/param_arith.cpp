#include "flearn/param_arith.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>

#include "flearn/detail/csv.hpp"
#include "flearn/errors.hpp"

namespace flearn {

namespace {

void require_same_layout(const NamedTensors& a, const NamedTensors& b) {
  if (a.size() != b.size()) {
    throw ConfigError("layout mismatch: " + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + " tensors");
  }
  auto ia = a.begin();
  auto ib = b.begin();
  for (; ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first) {
      throw ConfigError("layout mismatch: tensor \"" + ia->first + "\" vs \"" + ib->first + "\"");
    }
    if (ia->second.shape != ib->second.shape) {
      throw ConfigError("shape mismatch for tensor \"" + ia->first + "\"");
    }
  }
}

}  // namespace

TaskVector extract_delta(const ParamSet& theta_ft, const ParamSet& theta, std::string source) {
  if (theta_ft.config != theta.config) throw ConfigError("config mismatch between models");
  require_same_layout(theta_ft.entries, theta.entries);
  TaskVector delta;
  delta.config = theta.config;
  delta.source = std::move(source);
  for (const auto& [name, ft] : theta_ft.entries) {
    const Tensor& base = theta.entries.at(name);
    Tensor d = Tensor::zeros(ft.shape);
    for (std::size_t i = 0; i < d.values.size(); ++i) {
      d.values[i] = static_cast<float>(static_cast<double>(ft.values[i]) -
                                       static_cast<double>(base.values[i]));
    }
    delta.entries.emplace(name, std::move(d));
  }
  return delta;
}

ParamSet apply_forgetting(const ParamSet& theta, const TaskVector& delta, double lambda) {
  if (theta.config != delta.config) throw ConfigError("config mismatch between model and delta");
  require_same_layout(theta.entries, delta.entries);
  ParamSet out = theta;
  if (lambda == 0.0) return out;  // bit-exact identity
  for (auto& [name, tensor] : out.entries) {
    const Tensor& d = delta.entries.at(name);
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
      tensor.values[i] = static_cast<float>(static_cast<double>(tensor.values[i]) -
                                            lambda * static_cast<double>(d.values[i]));
    }
  }
  return out;
}

LayerDistanceReport layer_distances(const ParamSet& a, const ParamSet& b) {
  if (a.config != b.config) throw ConfigError("config mismatch between models");
  require_same_layout(a.entries, b.entries);
  LayerDistanceReport report;
  for (const auto& [name, ta] : a.entries) {
    const Tensor& tb = b.entries.at(name);
    double sum = 0.0;
    for (std::size_t i = 0; i < ta.values.size(); ++i) {
      const double d = static_cast<double>(ta.values[i]) - static_cast<double>(tb.values[i]);
      sum += d * d;
    }
    report.entries.push_back({name, layer_of(name), family_of(name), std::sqrt(sum)});
  }
  return report;
}

double LayerDistanceReport::family_mean(TensorFamily family) const {
  double sum = 0.0;
  int count = 0;
  for (const LayerDistanceEntry& e : entries) {
    if (e.family == family) {
      sum += e.distance;
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / count;
}

double LayerDistanceReport::attention_mean() const {
  double sum = 0.0;
  int count = 0;
  for (const LayerDistanceEntry& e : entries) {
    if (e.family == TensorFamily::kQuery || e.family == TensorFamily::kKey ||
        e.family == TensorFamily::kValue || e.family == TensorFamily::kOutput) {
      sum += e.distance;
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / count;
}

double LayerDistanceReport::mlp_mean() const {
  double sum = 0.0;
  int count = 0;
  for (const LayerDistanceEntry& e : entries) {
    if (e.family == TensorFamily::kMlpUp || e.family == TensorFamily::kMlpDown) {
      sum += e.distance;
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / count;
}

void write_layer_distances_csv(std::ostream& out, const LayerDistanceReport& report) {
  out << "tensor,layer,family,distance\n";
  for (const LayerDistanceEntry& e : report.entries) {
    out << e.tensor_name << "," << e.layer << "," << family_name(e.family) << ","
        << detail::format_double(e.distance) << "\n";
  }
}

// ---------------------------------------------------------------------------
// Checkpoint container.
// Layout: "FLRN", version byte (1), kind byte, u32 entry count; per entry a
// u16 name length, the name bytes, a rank byte, rank u32 dims, then the f32
// values; all integers and floats little-endian; trailing u64 CRC-64 of every
// preceding byte.
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kCrcPoly = 0xC96C5795D7870F42ull;  // CRC-64/XZ, reflected

struct CrcTable {
  std::array<std::uint64_t, 256> values{};
  constexpr CrcTable() {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint64_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? (c >> 1) ^ kCrcPoly : c >> 1;
      values[i] = c;
    }
  }
};
constexpr CrcTable kCrcTable;

constexpr char kMagic[4] = {'F', 'L', 'R', 'N'};
constexpr std::uint8_t kVersion = 1;
constexpr const char* kMetaName = "__meta__";
constexpr const char* kSourceName = "__source__";

void append_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f32(std::string& out, float v) {
  append_u32(out, std::bit_cast<std::uint32_t>(v));
}

struct Reader {
  const std::string& bytes;
  std::size_t offset = 0;

  void need(std::size_t n, const char* what) const {
    if (offset + n > bytes.size()) {
      throw FormatError(std::string("truncated checkpoint: need ") + what + " at offset " +
                        std::to_string(offset));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(bytes[offset++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes[offset++])) << (8 * i);
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[offset++])) << (8 * i);
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes.substr(offset, n);
    offset += n;
    return s;
  }
};

// The config rides along as a reserved entry: the six dimension counts plus
// the seed split into two bit-cast 32-bit halves (exact round trip).
Tensor meta_tensor(const ModelConfig& cfg) {
  Tensor t = Tensor::zeros({8});
  t.values[0] = static_cast<float>(cfg.vocab_size);
  t.values[1] = static_cast<float>(cfg.d_model);
  t.values[2] = static_cast<float>(cfg.n_layers);
  t.values[3] = static_cast<float>(cfg.n_heads);
  t.values[4] = static_cast<float>(cfg.d_ff);
  t.values[5] = static_cast<float>(cfg.max_seq_len);
  t.values[6] = std::bit_cast<float>(static_cast<std::uint32_t>(cfg.seed & 0xffffffffull));
  t.values[7] = std::bit_cast<float>(static_cast<std::uint32_t>(cfg.seed >> 32));
  return t;
}

ModelConfig config_from_meta(const Tensor& t) {
  if (t.shape != std::vector<std::int64_t>{8}) {
    throw FormatError("malformed __meta__ entry in checkpoint");
  }
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(t.values[0]);
  cfg.d_model = static_cast<int>(t.values[1]);
  cfg.n_layers = static_cast<int>(t.values[2]);
  cfg.n_heads = static_cast<int>(t.values[3]);
  cfg.d_ff = static_cast<int>(t.values[4]);
  cfg.max_seq_len = static_cast<int>(t.values[5]);
  cfg.seed = static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(t.values[6])) |
             (static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(t.values[7])) << 32);
  return cfg;
}

Tensor source_tensor(const std::string& source) {
  Tensor t = Tensor::zeros({static_cast<std::int64_t>(source.size())});
  for (std::size_t i = 0; i < source.size(); ++i) {
    t.values[i] = static_cast<float>(static_cast<unsigned char>(source[i]));
  }
  return t;
}

std::string source_from_tensor(const Tensor& t) {
  std::string s;
  s.reserve(t.values.size());
  for (float v : t.values) s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  return s;
}

}  // namespace

std::uint64_t crc64(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const std::uint8_t*>(data);
  std::uint64_t crc = ~0ull;
  for (std::size_t i = 0; i < size; ++i) {
    crc = kCrcTable.values[(crc ^ bytes[i]) & 0xff] ^ (crc >> 8);
  }
  return ~crc;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  NamedTensors all;
  all.emplace(kMetaName, meta_tensor(checkpoint.config));
  if (!checkpoint.source.empty()) all.emplace(kSourceName, source_tensor(checkpoint.source));
  for (const auto& [name, tensor] : checkpoint.extra) {
    if (name.substr(0, 2) != "__") {
      throw ConfigError("extra checkpoint entry \"" + name + "\" must start with \"__\"");
    }
    if (!all.emplace(name, tensor).second) {
      throw ConfigError("duplicate checkpoint entry \"" + name + "\"");
    }
  }
  for (const auto& [name, tensor] : checkpoint.tensors) {
    if (name.empty() || name.substr(0, 2) == "__") {
      throw ConfigError("tensor name \"" + name + "\" is reserved");
    }
    if (name.size() > 0xffff) throw ConfigError("tensor name too long: " + name);
    if (!all.emplace(name, tensor).second) {
      throw ConfigError("duplicate checkpoint entry \"" + name + "\"");
    }
  }

  std::string buf;
  buf.append(kMagic, 4);
  buf.push_back(static_cast<char>(kVersion));
  buf.push_back(static_cast<char>(checkpoint.kind));
  append_u32(buf, static_cast<std::uint32_t>(all.size()));
  for (const auto& [name, tensor] : all) {
    append_u16(buf, static_cast<std::uint16_t>(name.size()));
    buf.append(name);
    if (tensor.shape.size() > 0xff) throw ConfigError("tensor rank too large: " + name);
    buf.push_back(static_cast<char>(tensor.shape.size()));
    std::int64_t numel = 1;
    for (std::int64_t dim : tensor.shape) {
      if (dim < 0 || dim > 0xffffffffll) throw ConfigError("tensor dim out of range: " + name);
      append_u32(buf, static_cast<std::uint32_t>(dim));
      numel *= dim;
    }
    if (numel != static_cast<std::int64_t>(tensor.values.size())) {
      throw ConfigError("tensor \"" + name + "\" values do not match its shape");
    }
    for (float v : tensor.values) append_f32(buf, v);
  }
  append_u64(buf, crc64(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw InputError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path + " for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < 4 + 1 + 1 + 4 + 8) {
    throw FormatError("truncated checkpoint: " + std::to_string(bytes.size()) + " bytes");
  }
  const std::uint64_t stored_crc = [&] {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(
               static_cast<std::uint8_t>(bytes[bytes.size() - 8 + i]))
           << (8 * i);
    }
    return v;
  }();
  if (crc64(bytes.data(), bytes.size() - 8) != stored_crc) {
    throw FormatError("checkpoint checksum mismatch at offset " +
                      std::to_string(bytes.size() - 8));
  }

  Reader r{bytes};
  if (r.str(4, "magic") != std::string(kMagic, 4)) {
    throw FormatError("bad magic bytes at offset 0");
  }
  const std::uint8_t version = r.u8("version");
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                      " at offset 4");
  }
  const std::uint8_t kind_byte = r.u8("kind");
  if (kind_byte < 1 || kind_byte > 3) {
    throw FormatError("unknown checkpoint kind " + std::to_string(kind_byte) + " at offset 5");
  }
  const std::uint32_t count = r.u32("entry count");

  Checkpoint out;
  out.kind = static_cast<CheckpointKind>(kind_byte);
  NamedTensors all;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint16_t name_len = r.u16("name length");
    std::string name = r.str(name_len, "name");
    const std::uint8_t rank = r.u8("rank");
    Tensor t;
    std::int64_t numel = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      const std::uint32_t dim = r.u32("dim");
      t.shape.push_back(static_cast<std::int64_t>(dim));
      numel *= dim;
    }
    r.need(static_cast<std::size_t>(numel) * 4, "values");
    t.values.reserve(static_cast<std::size_t>(numel));
    for (std::int64_t i = 0; i < numel; ++i) t.values.push_back(r.f32("value"));
    if (!all.emplace(std::move(name), std::move(t)).second) {
      throw FormatError("duplicate tensor name in checkpoint at offset " +
                        std::to_string(r.offset));
    }
  }
  if (r.offset != bytes.size() - 8) {
    throw FormatError("trailing bytes after entries at offset " + std::to_string(r.offset));
  }

  auto meta = all.find(kMetaName);
  if (meta == all.end()) throw FormatError("checkpoint has no __meta__ entry");
  out.config = config_from_meta(meta->second);
  all.erase(meta);
  if (auto src = all.find(kSourceName); src != all.end()) {
    out.source = source_from_tensor(src->second);
    all.erase(src);
  }
  for (auto& [name, tensor] : all) {
    if (name.substr(0, 2) == "__") {
      out.extra.emplace(name, std::move(tensor));
    } else {
      out.tensors.emplace(name, std::move(tensor));
    }
  }
  return out;
}

void save_params(const ParamSet& params, const std::string& path) {
  Checkpoint cp;
  cp.kind = CheckpointKind::kParams;
  cp.config = params.config;
  cp.tensors = params.entries;
  save_checkpoint(cp, path);
}

ParamSet load_params(const std::string& path) {
  Checkpoint cp = load_checkpoint(path);
  if (cp.kind != CheckpointKind::kParams) {
    throw FormatError("expected a params checkpoint, found kind " +
                      std::to_string(static_cast<int>(cp.kind)) + ": " + path);
  }
  ParamSet params;
  params.config = cp.config;
  params.entries = std::move(cp.tensors);
  return params;
}

void save_delta(const TaskVector& delta, const std::string& path) {
  Checkpoint cp;
  cp.kind = CheckpointKind::kDelta;
  cp.config = delta.config;
  cp.source = delta.source;
  cp.tensors = delta.entries;
  save_checkpoint(cp, path);
}

TaskVector load_delta(const std::string& path) {
  Checkpoint cp = load_checkpoint(path);
  if (cp.kind != CheckpointKind::kDelta) {
    throw FormatError("expected a delta checkpoint, found kind " +
                      std::to_string(static_cast<int>(cp.kind)) + ": " + path);
  }
  TaskVector delta;
  delta.config = cp.config;
  delta.source = std::move(cp.source);
  delta.entries = std::move(cp.tensors);
  return delta;
}

}  // namespace flearn
