#include "gtp/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "gtp/classes.hpp"
#include "gtp/error.hpp"
#include "gtp/image.hpp"
#include "gtp/rng.hpp"

namespace gtp {

namespace fs = std::filesystem;

ClassCounts LabeledDataset::counts() const {
  ClassCounts c;
  for (const auto& s : items) {
    if (s.label >= c.n.size()) throw IndexError("label " + std::to_string(s.label) + " out of range");
    ++c.n[s.label];
  }
  return c;
}

std::vector<std::size_t> LabeledDataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(items.size());
  for (const auto& s : items) out.push_back(s.label);
  return out;
}

void LabeledDataset::validate() const {
  std::unordered_set<std::string> ids;
  for (const auto& s : items) {
    if (s.label >= kClassNames.size()) throw ValidationError("sample '" + s.sample_id + "' has an invalid label");
    if (!ids.insert(s.sample_id).second) throw ValidationError("duplicate sample id '" + s.sample_id + "'");
    if (s.image.rank() != 3 || s.image.dim(0) != 3) {
      throw ShapeError("sample '" + s.sample_id + "' image must be [3 x h x w], got " + dims_to_string(s.image.dims()));
    }
    if (s.image.dims() != items.front().image.dims()) {
      throw ShapeError("sample '" + s.sample_id + "' has size " + dims_to_string(s.image.dims()) + ", expected " +
                       dims_to_string(items.front().image.dims()));
    }
    for (double v : s.image.values()) {
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("sample '" + s.sample_id + "' has pixels outside [0, 1]");
    }
  }
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing '" + path + "'");
}

// Header token reader for PGM: skips whitespace and '#' comments.
class PgmHeader {
 public:
  PgmHeader(const std::string& bytes, const std::string& name) : bytes_(bytes), name_(name) {}

  std::string token() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) fail("truncated header");
    return bytes_.substr(start, pos_ - start);
  }

  std::size_t number() {
    const std::string t = token();
    if (t.size() > 9 || !std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); })) {
      fail("bad header field '" + t + "'");
    }
    return static_cast<std::size_t>(std::stoul(t));
  }

  /// Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) fail("missing raster");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& why) const { throw ParseError("malformed PGM '" + name_ + "': " + why); }

 private:
  const std::string& bytes_;
  const std::string& name_;
  std::size_t pos_ = 0;
};

}  // namespace

Tensor decode_pgm(const std::string& bytes, const std::string& name) {
  PgmHeader header(bytes, name);
  if (header.token() != "P5") header.fail("expected magic P5");
  const std::size_t w = header.number();
  const std::size_t h = header.number();
  const std::size_t maxval = header.number();
  if (w == 0 || h == 0) header.fail("zero width or height");
  if (maxval != 255) header.fail("maxval must be 255, got " + std::to_string(maxval));
  const std::size_t start = header.raster_start();
  if (bytes.size() - start < w * h) header.fail("raster has " + std::to_string(bytes.size() - start) + " bytes, expected " +
                                               std::to_string(w * h));
  Tensor out({3, h, w});
  for (std::size_t i = 0; i < w * h; ++i) {
    const double v = static_cast<double>(static_cast<unsigned char>(bytes[start + i])) / 255.0;
    out[i] = v;
    out[w * h + i] = v;
    out[2 * w * h + i] = v;
  }
  return out;
}

Tensor read_pgm(const std::string& path) { return decode_pgm(read_file(path), path); }

std::string encode_pgm(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("encode_pgm: image must be [c x h x w], got " + dims_to_string(image.dims()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (std::size_t i = 0; i < h * w; ++i) {
    double v = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) v += image[ch * h * w + i];
    v = std::clamp(v / static_cast<double>(c), 0.0, 1.0);
    out += static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  return out;
}

void write_pgm(const Tensor& image, const std::string& path) { write_file(path, encode_pgm(image)); }

LabeledDataset load_image_dataset(const std::string& directory, const std::string& labels_csv) {
  std::istringstream in(read_file(labels_csv));
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  LabeledDataset data;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "filename,class") throw ParseError("labels CSV header must be 'filename,class'", line_no);
      header_seen = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw ParseError("expected 'filename,class'", line_no);
    }
    const std::string file = line.substr(0, comma);
    std::size_t label = 0;
    try {
      label = class_index(line.substr(comma + 1));
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
    const fs::path path = fs::path(directory) / file;
    if (!fs::exists(path)) throw IoError("image '" + path.string() + "' listed in " + labels_csv + " does not exist");
    data.items.push_back({fs::path(file).stem().string(), read_pgm(path.string()), label});
  }
  if (!header_seen) throw ParseError("labels CSV '" + labels_csv + "' is empty");
  data.validate();
  return data;
}

void save_image_dataset(const LabeledDataset& data, const std::string& directory) {
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw IoError("cannot create '" + directory + "': " + ec.message());
  std::string labels = "filename,class\n";
  for (const auto& s : data.items) {
    const std::string file = s.sample_id + ".pgm";
    write_pgm(s.image, (fs::path(directory) / file).string());
    labels += file + "," + class_name(s.label) + "\n";
  }
  write_file((fs::path(directory) / "labels.csv").string(), labels);
}

LabeledDataset resized(const LabeledDataset& data, std::size_t target) {
  LabeledDataset out;
  out.items.reserve(data.items.size());
  for (const auto& s : data.items) out.items.push_back({s.sample_id, resize(s.image, target), s.label});
  return out;
}

std::size_t split_train_count(std::size_t n, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  return static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
}

std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& data, std::uint64_t seed,
                                                           double train_fraction) {
  std::array<std::vector<std::size_t>, 4> by_class;
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    const std::size_t label = data.items[i].label;
    if (label >= by_class.size()) throw IndexError("label " + std::to_string(label) + " out of range");
    by_class[label].push_back(i);
  }
  std::vector<bool> to_train(data.items.size(), false);
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& idx = by_class[k];
    if (idx.size() < kMinSamplesPerClass) {
      throw ConfigError("class " + class_name(k) + " has " + std::to_string(idx.size()) + " samples; at least " +
                        std::to_string(kMinSamplesPerClass) + " are needed to split");
    }
    Rng rng = Rng::derive(seed, /*stream=*/0x5917, k);
    rng.shuffle(idx);
    const std::size_t n_train = split_train_count(idx.size(), train_fraction);
    for (std::size_t j = 0; j < n_train; ++j) to_train[idx[j]] = true;
  }
  std::pair<LabeledDataset, LabeledDataset> out;
  for (std::size_t i = 0; i < data.items.size(); ++i) {
    (to_train[i] ? out.first : out.second).items.push_back(data.items[i]);
  }
  return out;
}

}  // namespace gtp
