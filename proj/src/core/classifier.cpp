#include "core/classifier.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <sstream>

#include <zlib.h>

#include "core/errors.hpp"

namespace exammon {

static_assert(std::endian::native == std::endian::little,
              "model files store parameters little-endian");

namespace {

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Activations of every layer for one sample; acts[0] is the standardized
// input, acts.back() the logits. pre[l] holds layer l's pre-activation.
struct Workspace {
  std::vector<std::vector<double>> acts;
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> delta;

  explicit Workspace(const ClassifierModel& m) {
    acts.resize(m.layers.size() + 1);
    pre.resize(m.layers.size());
    delta.resize(m.layers.size());
    acts[0].resize(m.layer_dims.front());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      acts[l + 1].resize(m.layers[l].out);
      pre[l].resize(m.layers[l].out);
      delta[l].resize(m.layers[l].out);
    }
  }
};

void check_input(const ClassifierModel& m, std::size_t n) {
  if (m.layer_dims.empty() || n != m.layer_dims.front()) {
    throw Error(ErrorCode::kDimMismatch, "feature length " + std::to_string(n) +
                                             " does not match model input " +
                                             std::to_string(m.layer_dims.empty() ? 0 : m.layer_dims.front()));
  }
}

void run_forward(const ClassifierModel& m, std::span<const double> x, Workspace& ws) {
  auto& a0 = ws.acts[0];
  if (m.input_shift.empty()) {
    std::copy(x.begin(), x.end(), a0.begin());
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) a0[i] = (x[i] - m.input_shift[i]) * m.input_scale[i];
  }
  const std::size_t last = m.layers.size() - 1;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const DenseLayer& layer = m.layers[l];
    const double* in = ws.acts[l].data();
    double* z = ws.pre[l].data();
    double* out = ws.acts[l + 1].data();
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double* w = layer.weights.data() + o * layer.in;
      double s = layer.bias[o];
      for (std::size_t i = 0; i < layer.in; ++i) s += w[i] * in[i];
      z[o] = s;
      out[o] = (l == last) ? s : std::max(s, 0.0);
    }
  }
}

// log-sum-exp of two logits minus the true class logit.
double cross_entropy(double z0, double z1, Label y) {
  const double hi = std::max(z0, z1);
  const double lse = hi + std::log(std::exp(z0 - hi) + std::exp(z1 - hi));
  return lse - (y == Label::kAbnormal ? z1 : z0);
}

template <typename T>
void put(std::string& buf, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  buf.append(bytes, sizeof(T));
}

void put_doubles(std::string& buf, std::span<const double> values) {
  buf.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  void get_doubles(std::vector<double>& out, std::size_t n) {
    need(n * sizeof(double));
    out.resize(n);
    std::memcpy(out.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::kCorruptModel, "model file truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

constexpr char kMagic[8] = {'E', 'X', 'M', 'M', 'O', 'D', 'E', 'L'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kMaxLayers = 64;
constexpr std::uint64_t kMaxWidth = 1 << 20;

std::uint32_t crc_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::size_t ClassifierModel::parameter_count() const {
  std::size_t n = 0;
  for (const DenseLayer& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

std::vector<double> ClassifierModel::parameters() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const DenseLayer& l : layers) {
    flat.insert(flat.end(), l.weights.begin(), l.weights.end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void ClassifierModel::set_parameters(std::span<const double> flat) {
  if (flat.size() != parameter_count()) {
    throw Error(ErrorCode::kDimMismatch, "parameter vector has wrong length");
  }
  auto it = flat.begin();
  for (DenseLayer& l : layers) {
    std::copy_n(it, l.weights.size(), l.weights.begin());
    it += static_cast<std::ptrdiff_t>(l.weights.size());
    std::copy_n(it, l.bias.size(), l.bias.begin());
    it += static_cast<std::ptrdiff_t>(l.bias.size());
  }
}

std::vector<std::size_t> default_layer_dims(FeatureMode mode) {
  return {feature_dims(mode), 128, 64, 2};
}

ClassifierModel init_model(std::vector<std::size_t> layer_dims, FeatureMode mode,
                           std::uint64_t seed, const KeypointSelection& sel) {
  if (layer_dims.size() < 2) {
    throw Error(ErrorCode::kBadDims, "a model needs at least an input and an output layer");
  }
  if (layer_dims.front() != feature_dims(mode)) {
    throw Error(ErrorCode::kBadDims, "input width " + std::to_string(layer_dims.front()) +
                                         " does not match " +
                                         std::string(feature_mode_name(mode)));
  }
  if (layer_dims.back() != 2) {
    throw Error(ErrorCode::kBadDims, "output width must be 2 for binary classification");
  }
  if (std::find(layer_dims.begin(), layer_dims.end(), std::size_t{0}) != layer_dims.end()) {
    throw Error(ErrorCode::kBadDims, "layer widths must be positive");
  }

  ClassifierModel m;
  m.layer_dims = std::move(layer_dims);
  m.feature_mode = mode;
  m.selection = sel;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < m.layer_dims.size(); ++l) {
    DenseLayer layer;
    layer.in = m.layer_dims[l];
    layer.out = m.layer_dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    layer.weights.resize(layer.in * layer.out);
    for (double& w : layer.weights) w = (2.0 * unit_uniform(rng) - 1.0) * limit;
    layer.bias.assign(layer.out, 0.0);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

Probabilities softmax2(double logit_normal, double logit_abnormal) {
  const double hi = std::max(logit_normal, logit_abnormal);
  const double e0 = std::exp(logit_normal - hi);
  const double e1 = std::exp(logit_abnormal - hi);
  const double sum = e0 + e1;
  return {e0 / sum, e1 / sum};
}

Probabilities forward(const ClassifierModel& model, std::span<const double> features) {
  check_input(model, features.size());
  Workspace ws(model);
  run_forward(model, features, ws);
  const auto& logits = ws.acts.back();
  return softmax2(logits[0], logits[1]);
}

Probabilities forward(const ClassifierModel& model, const FeatureVector& features) {
  if (features.mode != model.feature_mode) {
    throw Error(ErrorCode::kDimMismatch, "model expects " +
                                             std::string(feature_mode_name(model.feature_mode)) +
                                             " features, got " +
                                             std::string(feature_mode_name(features.mode)));
  }
  return forward(model, std::span<const double>(features.values));
}

Label threshold_label(double p_abnormal, double threshold) {
  return p_abnormal > threshold ? Label::kAbnormal : Label::kNormal;
}

Prediction predict(const ClassifierModel& model, const FeatureVector& features, double threshold) {
  const Probabilities p = forward(model, features);
  return {threshold_label(p.abnormal, threshold), p.abnormal};
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorCode::kInvalidArgument, "epochs must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorCode::kInvalidArgument, "learning rate must be > 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "momentum must be in [0, 1)");
  }
  if (batch_size < 1) throw Error(ErrorCode::kInvalidArgument, "batch size must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "threshold must be in (0, 1)");
  }
}

Metrics Metrics::from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn,
                             std::uint64_t tn) {
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.tn = tn;
  const std::uint64_t total = tp + fp + fn + tn;
  if (total == 0) throw Error(ErrorCode::kEmptyDataset, "no samples to score");
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(total);
  m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  return m;
}

Metrics evaluate(const ClassifierModel& model, std::span<const Example> data, double threshold) {
  if (data.empty()) throw Error(ErrorCode::kEmptyDataset, "evaluation set is empty");
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  Workspace ws(model);
  for (const Example& ex : data) {
    check_input(model, ex.x.size());
    run_forward(model, ex.x, ws);
    const auto& z = ws.acts.back();
    const Label pred = threshold_label(softmax2(z[0], z[1]).abnormal, threshold);
    if (pred == Label::kAbnormal) {
      (ex.y == Label::kAbnormal ? tp : fp) += 1;
    } else {
      (ex.y == Label::kAbnormal ? fn : tn) += 1;
    }
  }
  return Metrics::from_counts(tp, fp, fn, tn);
}

double mean_loss(const ClassifierModel& model, std::span<const Example> batch) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyDataset, "empty batch");
  Workspace ws(model);
  double total = 0.0;
  for (const Example& ex : batch) {
    check_input(model, ex.x.size());
    run_forward(model, ex.x, ws);
    total += cross_entropy(ws.acts.back()[0], ws.acts.back()[1], ex.y);
  }
  return total / static_cast<double>(batch.size());
}

namespace {

// Accumulates the summed (not averaged) gradient of `batch` into `grad`.
double accumulate_gradient(const ClassifierModel& model, std::span<const Example* const> batch,
                           Workspace& ws, std::vector<double>& grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  // Offsets of each layer's weights inside the flat gradient.
  std::vector<std::size_t> offset(model.layers.size());
  std::size_t pos = 0;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    offset[l] = pos;
    pos += model.layers[l].weights.size() + model.layers[l].bias.size();
  }

  double total = 0.0;
  const std::size_t last = model.layers.size() - 1;
  for (const Example* ex : batch) {
    check_input(model, ex->x.size());
    run_forward(model, ex->x, ws);
    const auto& z = ws.acts.back();
    total += cross_entropy(z[0], z[1], ex->y);

    const Probabilities p = softmax2(z[0], z[1]);
    ws.delta[last][0] = p.normal - (ex->y == Label::kNormal ? 1.0 : 0.0);
    ws.delta[last][1] = p.abnormal - (ex->y == Label::kAbnormal ? 1.0 : 0.0);

    for (std::size_t l = last + 1; l-- > 0;) {
      const DenseLayer& layer = model.layers[l];
      const double* in = ws.acts[l].data();
      const double* d = ws.delta[l].data();
      double* gw = grad.data() + offset[l];
      double* gb = gw + layer.weights.size();
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double dv = d[o];
        if (dv == 0.0) continue;
        double* row = gw + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) row[i] += dv * in[i];
        gb[o] += dv;
      }
      if (l == 0) break;
      double* prev = ws.delta[l - 1].data();
      const double* prev_pre = ws.pre[l - 1].data();
      std::fill(prev, prev + layer.in, 0.0);
      for (std::size_t o = 0; o < layer.out; ++o) {
        const double dv = d[o];
        if (dv == 0.0) continue;
        const double* w = layer.weights.data() + o * layer.in;
        for (std::size_t i = 0; i < layer.in; ++i) prev[i] += w[i] * dv;
      }
      for (std::size_t i = 0; i < layer.in; ++i) {
        if (prev_pre[i] <= 0.0) prev[i] = 0.0;
      }
    }
  }
  return total;
}

void fit_standardizer(ClassifierModel& model, std::span<const Example> data) {
  const std::size_t dims = model.layer_dims.front();
  std::vector<double> mean(dims, 0.0), var(dims, 0.0);
  for (const Example& ex : data) {
    for (std::size_t i = 0; i < dims; ++i) mean[i] += ex.x[i];
  }
  for (double& v : mean) v /= static_cast<double>(data.size());
  for (const Example& ex : data) {
    for (std::size_t i = 0; i < dims; ++i) {
      const double d = ex.x[i] - mean[i];
      var[i] += d * d;
    }
  }
  model.input_shift = mean;
  model.input_scale.resize(dims);
  for (std::size_t i = 0; i < dims; ++i) {
    const double sd = std::sqrt(var[i] / static_cast<double>(data.size()));
    model.input_scale[i] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
}

}  // namespace

LossAndGradient loss_and_gradient(const ClassifierModel& model, std::span<const Example> batch) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyDataset, "empty batch");
  std::vector<const Example*> ptrs;
  ptrs.reserve(batch.size());
  for (const Example& ex : batch) ptrs.push_back(&ex);
  Workspace ws(model);
  LossAndGradient out;
  out.gradient.resize(model.parameter_count());
  const double n = static_cast<double>(batch.size());
  out.loss = accumulate_gradient(model, ptrs, ws, out.gradient) / n;
  for (double& g : out.gradient) g /= n;
  return out;
}

TrainResult train(ClassifierModel model, std::span<const Example> train_set,
                  std::span<const Example> val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw Error(ErrorCode::kEmptyDataset, "training set is empty");
  for (const Example& ex : train_set) check_input(model, ex.x.size());
  for (const Example& ex : val_set) check_input(model, ex.x.size());

  if (cfg.standardize) fit_standardizer(model, train_set);

  std::vector<double> params = model.parameters();
  std::vector<double> velocity(params.size(), 0.0);
  std::vector<double> grad(params.size(), 0.0);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.shuffle_seed);
  Workspace ws(model);
  std::vector<const Example*> batch;

  TrainResult result;
  result.history.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t k = start; k < stop; ++k) batch.push_back(&train_set[order[k]]);
      const double batch_loss = accumulate_gradient(model, batch, ws, grad);
      if (!std::isfinite(batch_loss)) {
        throw Error(ErrorCode::kNonFiniteLoss,
                    "training diverged at epoch " + std::to_string(epoch));
      }
      epoch_loss += batch_loss;
      const double scale = cfg.learning_rate / static_cast<double>(batch.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] - scale * grad[i];
        params[i] += velocity[i];
      }
      model.set_parameters(params);
    }
    epoch_loss /= static_cast<double>(train_set.size());
    if (!std::isfinite(epoch_loss)) {
      throw Error(ErrorCode::kNonFiniteLoss, "training diverged at epoch " + std::to_string(epoch));
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = epoch_loss;
    if (!val_set.empty()) {
      rec.val = evaluate(model, val_set, cfg.threshold);
    } else {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      rec.val.accuracy = rec.val.precision = rec.val.recall = nan;
    }
    result.history.push_back(rec);
  }
  result.model = std::move(model);
  return result;
}

std::string serialize_model(const ClassifierModel& model) {
  std::string buf(kMagic, sizeof(kMagic));
  put<std::uint32_t>(buf, kFormatVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(model.feature_mode));
  put<std::uint64_t>(buf, model.seed);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(kSelectedPoints));
  for (int idx : model.selection.indices()) put<std::int32_t>(buf, idx);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(model.layer_dims.size()));
  for (std::size_t d : model.layer_dims) put<std::uint64_t>(buf, d);
  put<std::uint32_t>(buf, model.input_shift.empty() ? 0u : 1u);
  if (!model.input_shift.empty()) {
    put_doubles(buf, model.input_shift);
    put_doubles(buf, model.input_scale);
  }
  for (const DenseLayer& l : model.layers) {
    put_doubles(buf, l.weights);
    put_doubles(buf, l.bias);
  }
  put<std::uint32_t>(buf, crc_of(buf));
  return buf;
}

ClassifierModel deserialize_model(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCode::kCorruptModel, "not a model file");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - sizeof(std::uint32_t));
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + body.size(), sizeof(stored_crc));
  if (stored_crc != crc_of(body)) {
    throw Error(ErrorCode::kCorruptModel, "model checksum mismatch");
  }

  Reader rd(body);
  rd.get<std::uint64_t>();  // magic
  if (rd.get<std::uint32_t>() != kFormatVersion) {
    throw Error(ErrorCode::kCorruptModel, "unsupported model format version");
  }
  const auto mode_raw = rd.get<std::uint32_t>();
  if (mode_raw > static_cast<std::uint32_t>(FeatureMode::kDist171)) {
    throw Error(ErrorCode::kCorruptModel, "unknown feature mode in model file");
  }
  const auto mode = static_cast<FeatureMode>(mode_raw);
  const auto seed = rd.get<std::uint64_t>();
  if (rd.get<std::uint32_t>() != kSelectedPoints) {
    throw Error(ErrorCode::kCorruptModel, "selection length mismatch");
  }
  std::array<int, kSelectedPoints> indices{};
  for (int& idx : indices) idx = rd.get<std::int32_t>();
  const auto n_dims = rd.get<std::uint32_t>();
  if (n_dims < 2 || n_dims > kMaxLayers) throw Error(ErrorCode::kCorruptModel, "bad layer count");
  std::vector<std::size_t> dims(n_dims);
  for (std::size_t& d : dims) {
    const auto v = rd.get<std::uint64_t>();
    if (v == 0 || v > kMaxWidth) throw Error(ErrorCode::kCorruptModel, "bad layer width");
    d = static_cast<std::size_t>(v);
  }

  ClassifierModel m;
  try {
    m = init_model(dims, mode, seed, KeypointSelection::make(indices));
  } catch (const Error& e) {
    throw Error(ErrorCode::kCorruptModel, std::string("shape mismatch: ") + e.what());
  }
  if (rd.get<std::uint32_t>() != 0) {
    rd.get_doubles(m.input_shift, dims.front());
    rd.get_doubles(m.input_scale, dims.front());
  }
  for (DenseLayer& l : m.layers) {
    rd.get_doubles(l.weights, l.in * l.out);
    rd.get_doubles(l.bias, l.out);
  }
  if (rd.position() != body.size()) {
    throw Error(ErrorCode::kCorruptModel, "trailing bytes in model file");
  }
  for (const DenseLayer& l : m.layers) {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(l.weights.begin(), l.weights.end(), finite) ||
        !std::all_of(l.bias.begin(), l.bias.end(), finite)) {
      throw Error(ErrorCode::kCorruptModel, "non-finite parameter");
    }
  }
  return m;
}

void save_model(const ClassifierModel& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed: " + path.string());
}

ClassifierModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::kIoFailure, "read failed: " + path.string());
  return deserialize_model(bytes);
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,val_accuracy,val_precision,val_recall\n";
  for (const EpochRecord& r : history) {
    os << r.epoch << ',' << r.loss << ',' << r.val.accuracy << ',' << r.val.precision << ','
       << r.val.recall << '\n';
  }
  return os.str();
}

}  // namespace exammon
