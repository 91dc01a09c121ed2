#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace duallearn {

/// One row of data: x = [features, protected], label y and empirical mass.
struct Sample {
  Eigen::VectorXd features;
  std::vector<int> protected_attrs;
  double label = 0.0;
  double weight = 0.0;
};

struct AttributeSchema {
  std::vector<std::string> names;
  std::vector<int> cardinalities;

  std::size_t size() const { return cardinalities.size(); }
};

enum class TransformKind {
  kSwap,  // from <-> to, an involution
  kMap,   // from -> to only
};

/// Single-attribute counterfactual modification of the protected vector.
struct Transform {
  int attribute = 0;
  int from = 0;
  int to = 1;
  TransformKind kind = TransformKind::kSwap;

  /// Image of `z`, or nullopt when the transform leaves `z` unchanged.
  std::optional<std::vector<int>> apply(const std::vector<int>& z) const;

  bool operator==(const Transform&) const = default;
};

struct CounterfactualImage {
  std::size_t index = 0;
  bool fixed_point = false;
};

/// Finite, counterfactually closed empirical support.
///
/// Construction normalizes weights to sum to one and materializes the image
/// of every sample under every transform (iterating until closed). Images
/// that are not already present are appended as zero-weight samples.
/// Samples sharing the same x share a support point; function tables are
/// indexed by support point.
///
/// The evaluation measure on support points mixes the data marginal with its
/// counterfactual push-forwards:
///   pi = 1/2 W + 1/(2K) sum_k (rho_k)_# W,
/// where W is the per-point sample mass and K the number of transforms
/// (pi = W when there are no transforms). Every point that enters a loss has
/// positive pi; points reachable only by iterating transforms have pi = 0.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<Sample> samples, AttributeSchema schema, std::vector<Transform> transforms = {});

  std::size_t num_samples() const { return samples_.size(); }
  std::size_t num_source_samples() const { return num_sources_; }
  std::size_t support_size() const { return static_cast<std::size_t>(inputs_.rows()); }
  std::size_t feature_dim() const { return feature_dim_; }
  /// Width of the encoded model input: features plus one-hot protected codes.
  std::size_t input_dim() const { return static_cast<std::size_t>(inputs_.cols()); }

  const Sample& sample(std::size_t i) const { return samples_.at(i); }
  const std::vector<Sample>& samples() const { return samples_; }
  const AttributeSchema& schema() const { return schema_; }
  const std::vector<Transform>& transforms() const { return transforms_; }
  std::optional<std::size_t> find_transform(const Transform& t) const;

  std::size_t point_of(std::size_t sample_index) const { return point_of_.at(sample_index); }
  std::size_t representative_sample(std::size_t point) const { return representative_.at(point); }
  const std::vector<int>& point_protected(std::size_t point) const { return point_protected_.at(point); }

  /// Encoded model inputs, one row per support point.
  const Eigen::MatrixXd& inputs() const { return inputs_; }
  /// Sample mass aggregated per support point (W).
  const Eigen::VectorXd& point_mass() const { return point_mass_; }
  /// Evaluation measure pi used by the empirical L2 inner product.
  const Eigen::VectorXd& measure() const { return measure_; }

  CounterfactualImage counterfactual_apply(std::size_t sample_index, std::size_t transform_index) const;
  CounterfactualImage point_image(std::size_t point, std::size_t transform_index) const;

  /// One-hot encoding used for model inputs.
  static Eigen::VectorXd encode(const Eigen::VectorXd& features, const std::vector<int>& z,
                                const AttributeSchema& schema);

 private:
  void validate_and_normalize();
  void close_under_transforms();
  void build_support();

  std::vector<Sample> samples_;
  AttributeSchema schema_;
  std::vector<Transform> transforms_;
  std::size_t num_sources_ = 0;
  std::size_t feature_dim_ = 0;

  // closure_[k][s] is the image of sample s under transform k.
  std::vector<std::vector<CounterfactualImage>> closure_;
  std::vector<std::vector<CounterfactualImage>> point_closure_;
  std::vector<std::size_t> point_of_;
  std::vector<std::size_t> representative_;
  std::vector<std::vector<int>> point_protected_;
  Eigen::MatrixXd inputs_;
  Eigen::VectorXd point_mass_;
  Eigen::VectorXd measure_;
};

/// Rows read from a dataset CSV (columns x0.., z0.., y, optional w).
std::vector<Sample> load_samples_csv(const std::string& path);
void write_samples_csv(const std::string& path, const std::vector<Sample>& samples);

/// Seeded split; weights in each part are left as read (the Dataset
/// constructor renormalizes).
std::pair<std::vector<Sample>, std::vector<Sample>> split_samples(const std::vector<Sample>& samples,
                                                                  double test_fraction, std::uint64_t seed);

}  // namespace duallearn
