#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "core/geometry.hpp"
#include "core/label.hpp"

namespace exammon {

// Fully-connected layer, weights stored row-major as out x in.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// ReLU hidden layers, two-way softmax output. Class 0 is Normal, class 1 is
// Abnormal. The optional input standardizer maps x to (x - shift) * scale
// before the first layer; empty vectors mean identity.
struct ClassifierModel {
  std::vector<std::size_t> layer_dims;
  std::vector<DenseLayer> layers;
  FeatureMode feature_mode = FeatureMode::kDist171;
  KeypointSelection selection = KeypointSelection::default_selection();
  std::uint64_t seed = 0;
  std::vector<double> input_shift;
  std::vector<double> input_scale;

  std::size_t parameter_count() const;
  // Flat parameter view: per layer, weights then bias.
  std::vector<double> parameters() const;
  void set_parameters(std::span<const double> flat);

  friend bool operator==(const ClassifierModel&, const ClassifierModel&) = default;
};

std::vector<std::size_t> default_layer_dims(FeatureMode mode);

// Seeded Glorot-uniform weights, zero biases. Throws kBadDims when the first
// width differs from the mode's dimensionality or the last is not 2.
ClassifierModel init_model(std::vector<std::size_t> layer_dims, FeatureMode mode,
                           std::uint64_t seed,
                           const KeypointSelection& sel = KeypointSelection::default_selection());

struct Probabilities {
  double normal = 0.5;
  double abnormal = 0.5;
};

// Numerically stable two-way softmax.
Probabilities softmax2(double logit_normal, double logit_abnormal);

Probabilities forward(const ClassifierModel& model, const FeatureVector& features);
Probabilities forward(const ClassifierModel& model, std::span<const double> features);

struct Prediction {
  Label label = Label::kNormal;
  double p_abnormal = 0.0;
};

// Abnormal iff p_abnormal > threshold; a tie resolves to Normal.
Label threshold_label(double p_abnormal, double threshold);
Prediction predict(const ClassifierModel& model, const FeatureVector& features, double threshold);

// A sample in feature space.
struct Example {
  std::vector<double> x;
  Label y = Label::kNormal;
};

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::uint64_t shuffle_seed = 1;
  double threshold = 0.5;
  // Fit the input standardizer on the training set before the first epoch.
  bool standardize = true;

  void validate() const;
};

struct Metrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  // Precision / recall are 0 when their denominator is 0.
  static Metrics from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn,
                             std::uint64_t tn);
  std::uint64_t total() const { return tp + fp + fn + tn; }
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  Metrics val;
};

struct TrainResult {
  ClassifierModel model;
  std::vector<EpochRecord> history;
};

// Mini-batch gradient descent with momentum on mean cross-entropy.
// Deterministic for fixed model, data and config.
TrainResult train(ClassifierModel model, std::span<const Example> train_set,
                  std::span<const Example> val_set, const TrainConfig& cfg);

Metrics evaluate(const ClassifierModel& model, std::span<const Example> data, double threshold);

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // same layout as ClassifierModel::parameters()
};

// Mean cross-entropy over `batch` and its gradient by backpropagation.
LossAndGradient loss_and_gradient(const ClassifierModel& model, std::span<const Example> batch);
double mean_loss(const ClassifierModel& model, std::span<const Example> batch);

void save_model(const ClassifierModel& model, const std::filesystem::path& path);
ClassifierModel load_model(const std::filesystem::path& path);

std::string serialize_model(const ClassifierModel& model);
ClassifierModel deserialize_model(std::string_view bytes);

// epoch,loss,val_accuracy,val_precision,val_recall
std::string history_csv(std::span<const EpochRecord> history);

}  // namespace exammon
