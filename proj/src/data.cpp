#include "flatmin/data.hpp"

#include "flatmin/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace flatmin {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;
constexpr std::array<char, 4> kCacheMagic = {'F', 'M', 'D', 'S'};
constexpr std::uint32_t kCacheVersion = 1;

static_assert(std::endian::native == std::endian::little, "cache format assumes little-endian");

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > buf.size()) throw std::runtime_error("truncated IDX header in " + path.string());
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

template <typename T>
void write_raw(std::ofstream& out, const T* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
}

template <typename T>
void read_raw(std::ifstream& in, T* data, std::size_t count, const std::filesystem::path& path) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(T)));
  if (!in) throw std::runtime_error("truncated dataset cache " + path.string());
}

}  // namespace

IdxData load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  if (read_be32(img, 0, images_path) != kImagesMagic)
    throw std::runtime_error("bad IDX image magic in " + images_path.string());
  if (read_be32(lab, 0, labels_path) != kLabelsMagic)
    throw std::runtime_error("bad IDX label magic in " + labels_path.string());

  const std::size_t count = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t label_count = read_be32(lab, 4, labels_path);
  if (count != label_count) {
    throw std::runtime_error("IDX count mismatch: " + std::to_string(count) + " images, " +
                             std::to_string(label_count) + " labels");
  }
  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + count * pixels) throw std::runtime_error("truncated IDX image data");
  if (lab.size() < 8 + count) throw std::runtime_error("truncated IDX label data");

  IdxData out;
  out.rows = rows;
  out.cols = cols;
  out.pixels.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(pixels));
  out.labels.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    for (std::size_t p = 0; p < pixels; ++p) {
      out.pixels(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p)) =
          img[16 + k * pixels + p] / 255.0;
    }
    out.labels[k] = lab[8 + k];
  }
  return out;
}

double lower_median(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) throw std::invalid_argument("median of empty vector");
  std::vector<double> tmp(v.data(), v.data() + v.size());
  const auto mid = tmp.begin() + (tmp.size() - 1) / 2;
  std::nth_element(tmp.begin(), mid, tmp.end());
  return *mid;
}

Dataset median_binarize_filter(const IdxData& raw, std::pair<int, int> classes, double median_lo,
                               double median_hi) {
  if (classes.first == classes.second) throw std::invalid_argument("classes must be distinct");
  if (!(0.0 <= median_lo && median_lo < median_hi && median_hi <= 1.0))
    throw std::invalid_argument("median window must satisfy 0 <= lo < hi <= 1");

  std::vector<std::size_t> keep;
  std::vector<double> medians;
  for (std::size_t k = 0; k < raw.labels.size(); ++k) {
    if (raw.labels[k] != classes.first && raw.labels[k] != classes.second) continue;
    const double med = lower_median(raw.pixels.row(static_cast<Eigen::Index>(k)).transpose());
    if (med < median_lo || med > median_hi) continue;
    keep.push_back(k);
    medians.push_back(med);
  }
  if (keep.empty()) throw std::runtime_error("no images survive the class/median filter");

  Dataset ds;
  const auto n = raw.pixels.cols();
  ds.data.x.resize(static_cast<Eigen::Index>(keep.size()), n);
  ds.data.y.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const auto src = static_cast<Eigen::Index>(keep[j]);
    const auto dst = static_cast<Eigen::Index>(j);
    for (Eigen::Index i = 0; i < n; ++i) ds.data.x(dst, i) = raw.pixels(src, i) > medians[j] ? 1.0 : -1.0;
    ds.data.y[dst] = raw.labels[keep[j]] == classes.first ? 1.0 : -1.0;
  }
  ds.class_map = {{classes.first, 1}, {classes.second, -1}};
  ds.provenance.kind = "idx";
  ds.provenance.detail = "median-binarized (pixel > median -> +1), median window [" +
                         std::to_string(median_lo) + ", " + std::to_string(median_hi) + "]";
  return ds;
}

LabeledSet gather(const LabeledSet& set, const std::vector<std::size_t>& rows) {
  LabeledSet out;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), set.dim());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    out.x.row(static_cast<Eigen::Index>(j)) = set.x.row(static_cast<Eigen::Index>(rows[j]));
    out.y[static_cast<Eigen::Index>(j)] = set.y[static_cast<Eigen::Index>(rows[j])];
  }
  return out;
}

std::pair<Dataset, Dataset> subsample_train(const Dataset& dataset, std::size_t n_train, Rng& rng,
                                            bool balanced) {
  const auto total = static_cast<std::size_t>(dataset.size());
  if (n_train > total) {
    throw std::invalid_argument("n_train " + std::to_string(n_train) + " exceeds dataset size " +
                                std::to_string(total));
  }
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> rest_rows;
  if (!balanced) {
    train_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    rest_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  } else {
    std::vector<std::size_t> pos;
    std::vector<std::size_t> neg;
    for (auto r : order) (dataset.data.y[static_cast<Eigen::Index>(r)] > 0 ? pos : neg).push_back(r);
    std::size_t want_pos = std::min(pos.size(), (n_train + 1) / 2);
    std::size_t want_neg = std::min(neg.size(), n_train - want_pos);
    want_pos = n_train - want_neg;
    train_rows.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(want_pos));
    train_rows.insert(train_rows.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(want_neg));
    std::vector<std::size_t> rank(total);
    for (std::size_t k = 0; k < total; ++k) rank[order[k]] = k;
    std::sort(train_rows.begin(), train_rows.end(),
              [&](std::size_t a, std::size_t b) { return rank[a] < rank[b]; });
    rest_rows.assign(pos.begin() + static_cast<std::ptrdiff_t>(want_pos), pos.end());
    rest_rows.insert(rest_rows.end(), neg.begin() + static_cast<std::ptrdiff_t>(want_neg), neg.end());
  }

  Dataset train = dataset;
  Dataset rest = dataset;
  train.data = gather(dataset.data, train_rows);
  rest.data = gather(dataset.data, rest_rows);
  return {std::move(train), std::move(rest)};
}

Dataset synth_teacher_dataset(std::size_t n, std::size_t teacher_hidden, std::size_t p, Rng& rng) {
  if (n == 0 || teacher_hidden == 0 || p == 0)
    throw std::invalid_argument("synthetic dataset needs N, H_teacher, P >= 1");
  Dataset ds;
  const auto teacher = init_weights(static_cast<Eigen::Index>(teacher_hidden),
                                    static_cast<Eigen::Index>(n), rng);
  std::bernoulli_distribution coin(0.5);
  ds.data.x.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(n));
  ds.data.y.resize(static_cast<Eigen::Index>(p));
  for (Eigen::Index mu = 0; mu < ds.data.x.rows(); ++mu) {
    for (Eigen::Index i = 0; i < ds.data.x.cols(); ++i) ds.data.x(mu, i) = coin(rng) ? 1.0 : -1.0;
    ds.data.y[mu] = predict(teacher, ds.data.x.row(mu).transpose());
  }
  ds.teacher = teacher;
  ds.class_map = {{1, 1}, {-1, -1}};
  ds.provenance.kind = "synthetic";
  ds.provenance.teacher_hidden = teacher_hidden;
  ds.provenance.detail = "uniform +-1 inputs labelled by a random committee teacher";
  return ds;
}

MinibatchStream::MinibatchStream(const LabeledSet& data, std::size_t batch_size, std::uint64_t seed)
    : data_(&data), batch_size_(batch_size), rng_(seed) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  const auto p = static_cast<std::size_t>(data.size());
  if (p == 0) throw std::invalid_argument("cannot batch an empty dataset");
  if (batch_size > p) throw std::invalid_argument("batch size exceeds dataset size");
  batches_per_epoch_ = (p + batch_size - 1) / batch_size;
  perm_.resize(p);
  cursor_ = p;  // forces a shuffle on first use
}

void MinibatchStream::reshuffle() {
  std::iota(perm_.begin(), perm_.end(), 0);
  std::shuffle(perm_.begin(), perm_.end(), rng_);
  cursor_ = 0;
}

LabeledSet MinibatchStream::next() {
  if (cursor_ >= perm_.size()) reshuffle();
  const std::size_t end = std::min(cursor_ + batch_size_, perm_.size());
  std::vector<std::size_t> rows(perm_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                perm_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  ++drawn_;
  return gather(*data_, rows);
}

std::vector<LabeledSet> MinibatchStream::epoch() {
  reshuffle();
  std::vector<LabeledSet> out;
  out.reserve(batches_per_epoch_);
  for (std::size_t b = 0; b < batches_per_epoch_; ++b) out.push_back(next());
  return out;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  nlohmann::json header = {
      {"patterns", ds.size()},
      {"inputs", ds.dim()},
      {"provenance",
       {{"kind", ds.provenance.kind},
        {"seed", ds.provenance.seed},
        {"teacher_hidden", ds.provenance.teacher_hidden},
        {"detail", ds.provenance.detail}}},
      {"teacher_rows", ds.teacher ? ds.teacher->rows() : 0},
  };
  nlohmann::json cmap = nlohmann::json::array();
  for (const auto& [from, to] : ds.class_map) cmap.push_back({from, to});
  header["class_map"] = cmap;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kCacheMagic.data(), 4);
  write_raw(out, &kCacheVersion, 1);
  const std::uint64_t len = text.size();
  write_raw(out, &len, 1);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<std::int8_t> labels(static_cast<std::size_t>(ds.size()));
  for (std::size_t k = 0; k < labels.size(); ++k)
    labels[k] = static_cast<std::int8_t>(ds.data.y[static_cast<Eigen::Index>(k)]);
  write_raw(out, labels.data(), labels.size());
  write_raw(out, ds.data.x.data(), static_cast<std::size_t>(ds.data.x.size()));
  if (ds.teacher) write_raw(out, ds.teacher->data(), static_cast<std::size_t>(ds.teacher->size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kCacheMagic) throw std::runtime_error("not a dataset cache: " + path.string());
  std::uint32_t version = 0;
  read_raw(in, &version, 1, path);
  if (version != kCacheVersion) throw std::runtime_error("unsupported cache version");
  std::uint64_t len = 0;
  read_raw(in, &len, 1, path);
  std::string text(len, '\0');
  read_raw(in, text.data(), len, path);
  const auto header = nlohmann::json::parse(text);

  Dataset ds;
  const auto p = header.at("patterns").get<Eigen::Index>();
  const auto n = header.at("inputs").get<Eigen::Index>();
  const auto& prov = header.at("provenance");
  ds.provenance.kind = prov.at("kind").get<std::string>();
  ds.provenance.seed = prov.at("seed").get<std::uint64_t>();
  ds.provenance.teacher_hidden = prov.at("teacher_hidden").get<std::size_t>();
  ds.provenance.detail = prov.at("detail").get<std::string>();
  for (const auto& pair : header.at("class_map")) ds.class_map[pair[0].get<int>()] = pair[1].get<int>();

  std::vector<std::int8_t> labels(static_cast<std::size_t>(p));
  read_raw(in, labels.data(), labels.size(), path);
  ds.data.y.resize(p);
  for (Eigen::Index k = 0; k < p; ++k) ds.data.y[k] = labels[static_cast<std::size_t>(k)];
  ds.data.x.resize(p, n);
  read_raw(in, ds.data.x.data(), static_cast<std::size_t>(ds.data.x.size()), path);
  const auto teacher_rows = header.at("teacher_rows").get<Eigen::Index>();
  if (teacher_rows > 0) {
    WeightMatrix t(teacher_rows, n);
    read_raw(in, t.data(), static_cast<std::size_t>(t.size()), path);
    ds.teacher = std::move(t);
  }
  return ds;
}

}  // namespace flatmin
