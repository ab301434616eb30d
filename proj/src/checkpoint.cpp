#include "gtp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "gtp/error.hpp"

namespace gtp {

namespace {

constexpr char kMagic[4] = {'G', 'T', 'P', 'C'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xffu);
}

void put_f32(std::string& out, double value) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

struct NamedTensor {
  std::string name;
  const Tensor* tensor;
};

std::vector<NamedTensor> tensors_of(const GtpNetwork& net) {
  std::vector<NamedTensor> out;
  for (const auto& e : net.params()) out.push_back({e.name, &e.tensor});
  if (net.config().use_gtp) {
    out.push_back({"head.bn.running_mean", &net.batch_norm().running_mean});
    out.push_back({"head.bn.running_var", &net.batch_norm().running_var});
  }
  return out;
}

Tensor* mutable_tensor(GtpNetwork& net, const std::string& name) {
  if (name == "head.bn.running_mean" && net.config().use_gtp) return &net.batch_norm().running_mean;
  if (name == "head.bn.running_var" && net.config().use_gtp) return &net.batch_norm().running_var;
  if (net.params().contains(name)) return &net.params().get(name);
  return nullptr;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("truncated checkpoint while reading ") + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  const auto tensors = tensors_of(ckpt.network);
  nlohmann::json header{{"network", ckpt.network.config().to_json()},
                        {"class_counts", ckpt.counts.n},
                        {"loss", to_string(ckpt.loss)},
                        {"seed", ckpt.seed},
                        {"tensor_count", tensors.size()}};
  const std::string json = header.dump();
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(json.size()));
  out += json;
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out += static_cast<char>(static_cast<std::uint8_t>(t->rank()));
    for (auto d : t->dims()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t->values()) put_f32(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.str(4, "magic") != std::string(kMagic, 4)) throw ParseError("not a checkpoint (bad magic)");
  const auto version = in.u32("version");
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const auto json_len = in.u32("header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.str(json_len, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  NetworkConfig config;
  ClassCounts counts;
  LossKind loss{};
  std::uint64_t seed = 0;
  std::size_t tensor_count = 0;
  try {
    config = NetworkConfig::from_json(header.at("network"));
    counts.n = header.at("class_counts").get<std::array<std::uint64_t, 4>>();
    loss = parse_loss_kind(header.at("loss").get<std::string>());
    seed = header.at("seed").get<std::uint64_t>();
    tensor_count = header.at("tensor_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("incomplete checkpoint header: ") + e.what());
  }

  Checkpoint ckpt{GtpNetwork(config, seed), counts, loss, seed};
  const auto expected = tensors_of(ckpt.network);
  if (tensor_count != expected.size()) {
    throw ShapeError("checkpoint holds " + std::to_string(tensor_count) + " tensors, the network needs " +
                     std::to_string(expected.size()));
  }
  std::vector<bool> seen(expected.size(), false);
  for (std::size_t k = 0; k < tensor_count; ++k) {
    const std::string name = in.str(in.u32("tensor name length"), "tensor name");
    Tensor* dst = mutable_tensor(ckpt.network, name);
    if (!dst) throw ShapeError("checkpoint tensor '" + name + "' does not belong to the network");
    Dims dims(in.u8("tensor rank"));
    for (auto& d : dims) d = in.u32("tensor dims");
    if (dims != dst->dims()) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + dims_to_string(dims) + ", the network expects " +
                       dims_to_string(dst->dims()));
    }
    for (std::size_t i = 0; i < expected.size(); ++i)
      if (expected[i].name == name) {
        if (seen[i]) throw ParseError("checkpoint tensor '" + name + "' appears twice");
        seen[i] = true;
      }
    for (auto& v : dst->values()) v = static_cast<double>(std::bit_cast<float>(in.u32("tensor data")));
    if (!dst->all_finite()) throw ParseError("checkpoint tensor '" + name + "' holds non-finite values");
  }
  if (!in.done()) throw ParseError("trailing bytes after the last checkpoint tensor");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return decode_checkpoint(buf.str());
}

void round_to_float(GtpNetwork& net) {
  for (auto& e : net.params())
    for (auto& v : e.tensor.values()) v = static_cast<double>(static_cast<float>(v));
  if (net.config().use_gtp) {
    for (auto* t : {&net.batch_norm().running_mean, &net.batch_norm().running_var})
      for (auto& v : t->values()) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace gtp
