#include "dpt/hourglass/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "dpt/error.hpp"
#include "dpt/text_io.hpp"

namespace dpt::hourglass {

namespace {

constexpr char kMagic[8] = {'D', 'P', 'T', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_str(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

class Reader {
 public:
  Reader(const std::string& data, const std::filesystem::path& path) : data_(data), path_(path) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::uint64_t n) {
    if (n > data_.size() - pos_) throw DataError("checkpoint '" + path_.string() + "' is truncated");
  }
  const std::string& data_;
  std::filesystem::path path_;
  std::size_t pos_ = 0;
};

}  // namespace

const Array<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, a] : blobs)
    if (n == name) return &a;
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, kCheckpointVersion);
  put_str(out, ckpt.config_text);
  put_str(out, ckpt.meta_text);
  put_u64(out, ckpt.blobs.size());
  for (const auto& [name, a] : ckpt.blobs) {
    put_str(out, name);
    put_u64(out, a.rank());
    for (std::size_t d : a.shape()) put_u64(out, d);
    // Host floats are IEEE little-endian on every supported target.
    out.append(reinterpret_cast<const char*>(a.data()), a.size() * sizeof(float));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, out);
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  const std::string data = read_file(path);
  if (data.size() < sizeof kMagic || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
    throw DataError("'" + path.string() + "' is not a checkpoint");
  }
  const std::string rest = data.substr(sizeof kMagic);
  Reader r(rest, path);
  const std::uint64_t version = r.u64();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint '" + path.string() + "' has format version " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointVersion));
  }
  Checkpoint c;
  c.config_text = r.str();
  c.meta_text = r.str();
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = r.str();
    const std::uint64_t rank = r.u64();
    if (rank > 8) throw DataError("checkpoint blob '" + name + "' has an implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    Array<float> a(shape);
    r.bytes(a.data(), a.size() * sizeof(float));
    c.blobs.emplace_back(std::move(name), std::move(a));
  }
  if (!r.done()) throw DataError("checkpoint '" + path.string() + "' has trailing bytes");
  return c;
}

void check_config(const Checkpoint& ckpt, const ModelConfig& expected) {
  const ModelConfig stored = ModelConfig::parse(ckpt.config_text);
  if (stored == expected) return;
  std::string diff;
  const auto a = parse_key_values(stored.serialize(), "model config");
  const auto b = parse_key_values(expected.serialize(), "model config");
  for (std::size_t i = 0; i < a.size() && i < b.size(); ++i)
    if (a[i].second != b[i].second) diff += " " + a[i].first + " (" + a[i].second + " vs " + b[i].second + ")";
  throw DataError("checkpoint model config does not match:" + diff);
}

template <typename T>
void store_params(Checkpoint& ckpt, const ad::ParameterSet<T>& params, const std::string& prefix) {
  for (const auto& p : params.items()) ckpt.blobs.emplace_back(prefix + p.name, p.var.value().template cast<float>());
}

template <typename T>
void restore_params(const Checkpoint& ckpt, ad::ParameterSet<T>& params, const std::string& prefix) {
  for (auto& p : params.items()) {
    const Array<float>* a = ckpt.find(prefix + p.name);
    if (!a) throw DataError("checkpoint is missing parameter '" + p.name + "'");
    if (a->shape() != p.var.shape()) {
      throw DataError("checkpoint parameter '" + p.name + "' has shape " + shape_str(a->shape()) + ", model expects " +
                      shape_str(p.var.shape()));
    }
    p.var.mutable_value() = a->template cast<T>();
  }
}

template void store_params<float>(Checkpoint&, const ad::ParameterSet<float>&, const std::string&);
template void store_params<double>(Checkpoint&, const ad::ParameterSet<double>&, const std::string&);
template void restore_params<float>(const Checkpoint&, ad::ParameterSet<float>&, const std::string&);
template void restore_params<double>(const Checkpoint&, ad::ParameterSet<double>&, const std::string&);

}  // namespace dpt::hourglass
