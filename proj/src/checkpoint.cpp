#include "countnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace countnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'C', 'N', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void append_bytes(std::vector<char>& buf, const void* p, std::size_t n) {
  const char* c = static_cast<const char*>(p);
  buf.insert(buf.end(), c, c + n);
}

template <typename T>
void append_pod(std::vector<char>& buf, T v) {
  append_bytes(buf, &v, sizeof(T));
}

std::uint64_t fnv1a_bytes(const char* p, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 0x100000001b3ull;
  }
  return h;
}

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  void read(void* out, std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint file truncated");
    }
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }

  template <typename T>
  T read_pod() {
    T v;
    read(&v, sizeof(T));
    return v;
  }

  std::size_t pos() const { return pos_; }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ParamRegistry<float>& reg) {
  std::vector<char> buf;
  append_bytes(buf, kMagic, sizeof(kMagic));
  append_pod(buf, kVersion);
  const std::string cfg_text = cfg.to_text();
  append_pod<std::uint64_t>(buf, cfg_text.size());
  append_bytes(buf, cfg_text.data(), cfg_text.size());
  append_pod<std::uint64_t>(buf, reg.size());
  for (const auto& p : reg) {
    append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(p.name.size()));
    append_bytes(buf, p.name.data(), p.name.size());
    append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) append_pod<std::uint64_t>(buf, e);
    append_bytes(buf, p.value.data(), p.value.size() * sizeof(float));
  }
  append_pod<std::uint64_t>(buf, fnv1a_bytes(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof(kMagic) + sizeof(kVersion) + sizeof(std::uint64_t)) {
    throw CheckpointError(CheckpointError::Kind::Truncated, "checkpoint file too short");
  }
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t stored_sum;
  std::memcpy(&stored_sum, bytes.data() + body, sizeof(stored_sum));
  if (fnv1a_bytes(bytes.data(), body) != stored_sum) {
    throw CheckpointError(CheckpointError::Kind::ChecksumFailure,
                          "checkpoint checksum mismatch (file corrupt or truncated)");
  }
  bytes.resize(body);
  Reader r(std::move(bytes));

  char magic[sizeof(kMagic)];
  r.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(CheckpointError::Kind::BadMagic, "not a checkpoint file: " + path);
  }
  const auto version = r.read_pod<std::uint32_t>();
  if (version != kVersion) {
    throw CheckpointError(CheckpointError::Kind::VersionMismatch,
                          "checkpoint format version " + std::to_string(version) +
                              ", expected " + std::to_string(kVersion));
  }
  const auto cfg_len = r.read_pod<std::uint64_t>();
  std::string cfg_text(cfg_len, '\0');
  r.read(cfg_text.data(), cfg_len);
  ModelConfig cfg = ModelConfig::from_text(cfg_text);

  Checkpoint ck{cfg, ParamRegistry<float>{}};
  CountingModel<float> model(cfg, ck.params, 0);  // lays out names and shapes

  const auto n_records = r.read_pod<std::uint64_t>();
  if (n_records != ck.params.size()) {
    throw CheckpointError(CheckpointError::Kind::ConfigMismatch,
                          "checkpoint has " + std::to_string(n_records) + " parameters, config " +
                              cfg_text + " expects " + std::to_string(ck.params.size()));
  }
  for (std::uint64_t i = 0; i < n_records; ++i) {
    const auto name_len = r.read_pod<std::uint32_t>();
    std::string name(name_len, '\0');
    r.read(name.data(), name_len);
    const auto rank = r.read_pod<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = r.read_pod<std::uint64_t>();
    Parameter<float>* p = ck.params.find(name);
    if (!p) {
      throw CheckpointError(CheckpointError::Kind::ConfigMismatch,
                            "checkpoint parameter not in model: " + name);
    }
    if (p->value.shape() != shape) {
      throw CheckpointError(CheckpointError::Kind::ConfigMismatch,
                            "shape mismatch for " + name + ": checkpoint " + shape_str(shape) +
                                " vs model " + shape_str(p->value.shape()));
    }
    r.read(p->value.data(), p->value.size() * sizeof(float));
  }
  return ck;
}

}  // namespace countnet
