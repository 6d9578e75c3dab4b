#include "ff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace ff {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'F', 'F', 'C', 'K', 'P', 'T', '\0', '\0'};

json pool_to_json(const std::optional<PoolSpec>& pool) {
  if (!pool) return nullptr;
  return json{{"kernel", pool->kernel}, {"stride", pool->stride}};
}

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  void string(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    string(name);
    pod(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) pod(static_cast<std::uint32_t>(d));
    raw(t.data(), static_cast<std::size_t>(t.size()) * sizeof(float));
  }
  std::vector<char> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& b, std::size_t end) : bytes_(b), end_(end) {}
  template <typename T>
  T pod() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string string() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor<float>> tensor() {
    std::string name = string();
    const auto rank = pod<std::uint32_t>();
    if (rank == 0 || rank > 8) throw CheckpointError("checkpoint tensor '" + name + "' has invalid rank");
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(pod<std::uint32_t>()));
    Tensor<float> t(shape);
    const std::size_t n = static_cast<std::size_t>(t.size()) * sizeof(float);
    need(n);
    std::memcpy(t.data(), bytes_.data() + pos_, n);
    pos_ += n;
    return {std::move(name), std::move(t)};
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw CheckpointError("checkpoint truncated");
  }
  const std::vector<char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

void assign(Parameter<float>& p, std::map<std::string, Tensor<float>>& pool) {
  auto it = pool.find(p.name);
  if (it == pool.end()) throw CheckpointError("checkpoint is missing tensor '" + p.name + "'");
  if (it->second.shape() != p.value.shape()) {
    throw CheckpointError("checkpoint tensor '" + p.name + "' has shape " + to_string(it->second.shape()) +
                          ", network expects " + to_string(p.value.shape()));
  }
  p.value = std::move(it->second);
  pool.erase(it);
}

void assign(const std::string& name, Tensor<float>& target, std::map<std::string, Tensor<float>>& pool) {
  Parameter<float> p{name, target};
  assign(p, pool);
  target = std::move(p.value);
}

}  // namespace

json to_json(const NetworkConfig& cfg) {
  json blocks = json::array();
  for (const auto& b : cfg.blocks) {
    blocks.push_back({{"kind", to_string(b.kind)},
                      {"norm", to_string(b.norm)},
                      {"width", b.width},
                      {"kernel", b.kernel},
                      {"stride", b.stride},
                      {"pad", b.pad},
                      {"pool", pool_to_json(b.pool)}});
  }
  return json{{"preset", cfg.preset}, {"image_shape", cfg.image_shape}, {"num_classes", cfg.num_classes},
              {"blocks", blocks}};
}

NetworkConfig network_config_from_json(const json& j) {
  NetworkConfig cfg;
  cfg.preset = j.at("preset").get<std::string>();
  cfg.image_shape = j.at("image_shape").get<Shape>();
  cfg.num_classes = j.at("num_classes").get<int>();
  for (const auto& b : j.at("blocks")) {
    BlockConfig bc;
    bc.kind = block_kind_from_string(b.at("kind").get<std::string>());
    bc.norm = norm_kind_from_string(b.at("norm").get<std::string>());
    bc.width = b.at("width").get<Index>();
    bc.kernel = b.at("kernel").get<Index>();
    bc.stride = b.at("stride").get<Index>();
    bc.pad = b.at("pad").get<Index>();
    if (!b.at("pool").is_null()) bc.pool = PoolSpec{b["pool"].at("kernel").get<Index>(), b["pool"].at("stride").get<Index>()};
    cfg.blocks.push_back(bc);
  }
  return cfg;
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
  std::uint64_t h = seed;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_digest(const NetworkConfig& cfg) {
  const std::string s = to_json(cfg).dump();
  return fnv1a(s.data(), s.size());
}

std::string hex_digest(std::uint64_t digest) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << digest;
  return os.str();
}

std::vector<char> serialize_checkpoint(const Network<float>& net, const CheckpointExtras& extras) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod(kCheckpointVersion);
  w.pod(config_digest(net.config));
  w.string(to_json(net.config).dump());
  w.pod(static_cast<std::int64_t>(extras.epoch));
  w.pod(static_cast<std::uint32_t>(net.embedding.learned ? 1 : 0));

  std::uint32_t count = 1 + static_cast<std::uint32_t>(extras.tensors.size());
  for (const auto& b : net.blocks) count += b.config.norm == NormKind::BatchNorm ? 6 : 2;
  w.pod(count);
  for (const auto& b : net.blocks) {
    for (const auto* p : b.parameters()) w.tensor(p->name, p->value);
    if (b.config.norm == NormKind::BatchNorm) {
      const std::string prefix = b.weight.name.substr(0, b.weight.name.find('.'));
      w.tensor(prefix + ".running_mean", b.norm_state.running_mean);
      w.tensor(prefix + ".running_var", b.norm_state.running_var);
    }
  }
  w.tensor(net.embedding.matrix.name, net.embedding.matrix.value);
  for (const auto& [name, t] : extras.tensors) w.tensor(name, t);
  w.pod(fnv1a(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

LoadedCheckpoint deserialize_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (fnv1a(bytes.data(), bytes.size() - 8) != stored) throw CheckpointError("checkpoint checksum mismatch (corrupt file)");

  Reader rd(bytes, bytes.size() - 8);
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) rd.pod<char>();
  const auto version = rd.pod<std::uint32_t>();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto digest = rd.pod<std::uint64_t>();
  const std::string cfg_text = rd.string();
  NetworkConfig cfg;
  try {
    cfg = network_config_from_json(json::parse(cfg_text));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint config unreadable: ") + e.what());
  }
  if (config_digest(cfg) != digest) throw CheckpointError("checkpoint config digest mismatch (corrupt header)");
  const auto epoch = rd.pod<std::int64_t>();
  const bool learned = rd.pod<std::uint32_t>() != 0;
  const auto count = rd.pod<std::uint32_t>();
  std::map<std::string, Tensor<float>> pool;
  std::vector<std::string> order;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = rd.tensor();
    order.push_back(name);
    pool.emplace(std::move(name), std::move(t));
  }

  LoadedCheckpoint out{Network<float>(cfg, learned, 0), {}, digest};
  out.extras.epoch = epoch;
  for (auto& b : out.net.blocks) {
    for (auto* p : b.parameters()) assign(*p, pool);
    if (b.config.norm == NormKind::BatchNorm) {
      const std::string prefix = b.weight.name.substr(0, b.weight.name.find('.'));
      assign(prefix + ".running_mean", b.norm_state.running_mean, pool);
      assign(prefix + ".running_var", b.norm_state.running_var, pool);
    }
  }
  assign(out.net.embedding.matrix, pool);
  for (const auto& name : order) {
    auto it = pool.find(name);
    if (it != pool.end()) out.extras.tensors.emplace_back(name, std::move(it->second));
  }
  return out;
}

void save_checkpoint(const Network<float>& net, const std::string& path, const CheckpointExtras& extras) {
  const auto bytes = serialize_checkpoint(net, extras);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace ff
