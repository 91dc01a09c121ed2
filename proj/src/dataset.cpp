#include "duallearn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "duallearn/errors.hpp"

namespace duallearn {

namespace {

// Byte key over the exact feature values and protected codes.
std::string point_key(const Eigen::VectorXd& features, const std::vector<int>& z) {
  std::string key;
  key.resize(sizeof(double) * features.size() + sizeof(int) * z.size());
  std::memcpy(key.data(), features.data(), sizeof(double) * features.size());
  std::memcpy(key.data() + sizeof(double) * features.size(), z.data(), sizeof(int) * z.size());
  return key;
}

std::string sample_key(const Sample& s) {
  std::string key = point_key(s.features, s.protected_attrs);
  key.append(reinterpret_cast<const char*>(&s.label), sizeof(double));
  return key;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t start = cell.find_first_not_of(' ');
    out.push_back(start == std::string::npos ? std::string() : cell.substr(start));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

std::optional<std::vector<int>> Transform::apply(const std::vector<int>& z) const {
  if (attribute < 0 || static_cast<std::size_t>(attribute) >= z.size()) {
    throw StructuralError("transform attribute index out of range");
  }
  const int v = z[static_cast<std::size_t>(attribute)];
  int target = v;
  if (v == from) {
    target = to;
  } else if (kind == TransformKind::kSwap && v == to) {
    target = from;
  }
  if (target == v) return std::nullopt;
  std::vector<int> out = z;
  out[static_cast<std::size_t>(attribute)] = target;
  return out;
}

Dataset::Dataset(std::vector<Sample> samples, AttributeSchema schema, std::vector<Transform> transforms)
    : samples_(std::move(samples)), schema_(std::move(schema)), transforms_(std::move(transforms)) {
  validate_and_normalize();
  close_under_transforms();
  build_support();
}

void Dataset::validate_and_normalize() {
  if (samples_.empty()) throw StructuralError("dataset has no samples");
  if (schema_.names.size() != schema_.cardinalities.size()) {
    if (!schema_.names.empty()) throw StructuralError("attribute schema names/cardinalities mismatch");
    for (std::size_t a = 0; a < schema_.cardinalities.size(); ++a) schema_.names.push_back("z" + std::to_string(a));
  }
  for (int c : schema_.cardinalities) {
    if (c < 1) throw StructuralError("attribute cardinality must be positive");
  }
  feature_dim_ = static_cast<std::size_t>(samples_.front().features.size());
  double total = 0.0;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const Sample& s = samples_[i];
    if (static_cast<std::size_t>(s.features.size()) != feature_dim_) {
      throw StructuralError("sample " + std::to_string(i) + " has inconsistent feature dimension");
    }
    if (s.protected_attrs.size() != schema_.size()) {
      throw StructuralError("sample " + std::to_string(i) + " has wrong number of protected attributes");
    }
    for (std::size_t a = 0; a < s.protected_attrs.size(); ++a) {
      if (s.protected_attrs[a] < 0 || s.protected_attrs[a] >= schema_.cardinalities[a]) {
        throw StructuralError("sample " + std::to_string(i) + " protected code out of range for attribute " +
                              schema_.names[a]);
      }
    }
    if (!(s.weight >= 0.0) || !std::isfinite(s.weight)) {
      throw StructuralError("sample " + std::to_string(i) + " has invalid weight");
    }
    if (!s.features.allFinite() || !std::isfinite(s.label)) {
      throw NumericalError("non-finite sample value", i);
    }
    total += s.weight;
  }
  if (!(total > 0.0)) throw StructuralError("dataset weights sum to zero");
  for (Sample& s : samples_) s.weight /= total;
  num_sources_ = samples_.size();

  for (const Transform& t : transforms_) {
    if (t.attribute < 0 || static_cast<std::size_t>(t.attribute) >= schema_.size()) {
      throw StructuralError("transform references unknown attribute");
    }
    const int card = schema_.cardinalities[static_cast<std::size_t>(t.attribute)];
    if (t.from < 0 || t.from >= card || t.to < 0 || t.to >= card || t.from == t.to) {
      throw StructuralError("transform values invalid for attribute " +
                            schema_.names[static_cast<std::size_t>(t.attribute)]);
    }
  }
}

void Dataset::close_under_transforms() {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < samples_.size(); ++i) index.emplace(sample_key(samples_[i]), i);

  closure_.assign(transforms_.size(), {});
  std::deque<std::size_t> queue(samples_.size());
  std::iota(queue.begin(), queue.end(), std::size_t{0});
  while (!queue.empty()) {
    const std::size_t s = queue.front();
    queue.pop_front();
    for (std::size_t k = 0; k < transforms_.size(); ++k) {
      auto& row = closure_[k];
      if (row.size() <= s) row.resize(s + 1);
      auto image = transforms_[k].apply(samples_[s].protected_attrs);
      if (!image) {
        row[s] = {s, true};
        continue;
      }
      Sample twin{samples_[s].features, *image, samples_[s].label, 0.0};
      const std::string key = sample_key(twin);
      auto it = index.find(key);
      if (it == index.end()) {
        const std::size_t idx = samples_.size();
        samples_.push_back(std::move(twin));
        index.emplace(key, idx);
        queue.push_back(idx);
        row[s] = {idx, false};
      } else {
        row[s] = {it->second, false};
      }
    }
  }
  for (auto& row : closure_) row.resize(samples_.size());
}

void Dataset::build_support() {
  std::unordered_map<std::string, std::size_t> index;
  point_of_.resize(samples_.size());
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const std::string key = point_key(samples_[i].features, samples_[i].protected_attrs);
    auto [it, inserted] = index.emplace(key, representative_.size());
    if (inserted) {
      representative_.push_back(i);
      point_protected_.push_back(samples_[i].protected_attrs);
    }
    point_of_[i] = it->second;
  }
  const std::size_t n_points = representative_.size();

  std::size_t width = feature_dim_;
  for (int c : schema_.cardinalities) width += static_cast<std::size_t>(c);
  inputs_.resize(static_cast<Eigen::Index>(n_points), static_cast<Eigen::Index>(width));
  for (std::size_t j = 0; j < n_points; ++j) {
    const Sample& s = samples_[representative_[j]];
    inputs_.row(static_cast<Eigen::Index>(j)) = encode(s.features, s.protected_attrs, schema_).transpose();
  }

  point_closure_.assign(transforms_.size(), std::vector<CounterfactualImage>(n_points));
  for (std::size_t k = 0; k < transforms_.size(); ++k) {
    for (std::size_t j = 0; j < n_points; ++j) {
      const CounterfactualImage img = closure_[k][representative_[j]];
      point_closure_[k][j] = {point_of_[img.index], img.fixed_point};
    }
  }

  point_mass_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_points));
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    point_mass_[static_cast<Eigen::Index>(point_of_[i])] += samples_[i].weight;
  }
  if (transforms_.empty()) {
    measure_ = point_mass_;
  } else {
    Eigen::VectorXd pushed = Eigen::VectorXd::Zero(point_mass_.size());
    for (std::size_t k = 0; k < transforms_.size(); ++k) {
      for (std::size_t j = 0; j < n_points; ++j) {
        pushed[static_cast<Eigen::Index>(point_closure_[k][j].index)] += point_mass_[static_cast<Eigen::Index>(j)];
      }
    }
    measure_ = 0.5 * point_mass_ + (0.5 / static_cast<double>(transforms_.size())) * pushed;
  }
  measure_ /= measure_.sum();
}

std::optional<std::size_t> Dataset::find_transform(const Transform& t) const {
  for (std::size_t k = 0; k < transforms_.size(); ++k) {
    if (transforms_[k] == t) return k;
  }
  return std::nullopt;
}

CounterfactualImage Dataset::counterfactual_apply(std::size_t sample_index, std::size_t transform_index) const {
  if (transform_index >= closure_.size()) throw StructuralError("transform index out of range");
  if (sample_index >= samples_.size()) throw StructuralError("sample index out of range");
  return closure_[transform_index][sample_index];
}

CounterfactualImage Dataset::point_image(std::size_t point, std::size_t transform_index) const {
  if (transform_index >= point_closure_.size()) throw StructuralError("transform index out of range");
  if (point >= support_size()) throw StructuralError("support point out of range");
  return point_closure_[transform_index][point];
}

Eigen::VectorXd Dataset::encode(const Eigen::VectorXd& features, const std::vector<int>& z,
                                const AttributeSchema& schema) {
  std::size_t width = static_cast<std::size_t>(features.size());
  for (int c : schema.cardinalities) width += static_cast<std::size_t>(c);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(width));
  x.head(features.size()) = features;
  Eigen::Index offset = features.size();
  for (std::size_t a = 0; a < schema.size(); ++a) {
    x[offset + z[a]] = 1.0;
    offset += schema.cardinalities[a];
  }
  return x;
}

std::vector<Sample> load_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StorageError("cannot open dataset file " + path);
  std::string line;
  if (!std::getline(in, line)) throw StructuralError("dataset file " + path + " is empty");
  const std::vector<std::string> header = split_csv_line(line);
  std::vector<std::size_t> xcols, zcols;
  std::optional<std::size_t> ycol, wcol;
  std::vector<std::pair<int, std::size_t>> xs, zs;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h == "y") {
      ycol = c;
    } else if (h == "w") {
      wcol = c;
    } else if (h.size() > 1 && (h[0] == 'x' || h[0] == 'z') &&
               std::all_of(h.begin() + 1, h.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      (h[0] == 'x' ? xs : zs).emplace_back(std::stoi(h.substr(1)), c);
    } else {
      throw StructuralError("unexpected column '" + h + "' in " + path);
    }
  }
  if (!ycol) throw StructuralError("dataset file " + path + " has no 'y' column");
  std::sort(xs.begin(), xs.end());
  std::sort(zs.begin(), zs.end());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].first != static_cast<int>(i)) throw StructuralError("feature columns must be x0..x{d-1}");
    xcols.push_back(xs[i].second);
  }
  for (std::size_t i = 0; i < zs.size(); ++i) {
    if (zs[i].first != static_cast<int>(i)) throw StructuralError("protected columns must be z0..z{k-1}");
    zcols.push_back(zs[i].second);
  }

  std::vector<Sample> out;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw StructuralError("row " + std::to_string(row) + " of " + path + " has wrong column count");
    }
    Sample s;
    try {
      s.features.resize(static_cast<Eigen::Index>(xcols.size()));
      for (std::size_t i = 0; i < xcols.size(); ++i) s.features[static_cast<Eigen::Index>(i)] = std::stod(cells[xcols[i]]);
      for (std::size_t c : zcols) s.protected_attrs.push_back(std::stoi(cells[c]));
      s.label = std::stod(cells[*ycol]);
      s.weight = wcol ? std::stod(cells[*wcol]) : 1.0;
    } catch (const std::logic_error&) {
      throw StructuralError("row " + std::to_string(row) + " of " + path + " has an unparsable value");
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw StructuralError("dataset file " + path + " has no rows");
  return out;
}

void write_samples_csv(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw StorageError("cannot write " + path);
  if (samples.empty()) return;
  const auto d = samples.front().features.size();
  const auto k = samples.front().protected_attrs.size();
  for (Eigen::Index i = 0; i < d; ++i) out << 'x' << i << ',';
  for (std::size_t i = 0; i < k; ++i) out << 'z' << i << ',';
  out << "y,w\n";
  char buf[32];
  for (const Sample& s : samples) {
    for (Eigen::Index i = 0; i < d; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", s.features[i]);
      out << buf << ',';
    }
    for (int z : s.protected_attrs) out << z << ',';
    std::snprintf(buf, sizeof buf, "%.17g", s.label);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", s.weight);
    out << buf << '\n';
  }
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_samples(const std::vector<Sample>& samples,
                                                                  double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in [0, 1)");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(samples.size())));
  std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::pair<std::vector<Sample>, std::vector<Sample>> out;
  for (std::size_t i : train_idx) out.first.push_back(samples[i]);
  for (std::size_t i : test_idx) out.second.push_back(samples[i]);
  return out;
}

}  // namespace duallearn
