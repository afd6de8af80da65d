#include "caselab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "caselab/errors.hpp"
#include "caselab/random.hpp"

namespace caselab {

namespace {

Tensor he_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  Tensor t(shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

void check_pixels(const ModelBundle& model, const Tensor& pixels) {
  if (pixels.dims() != model.input_shape) {
    throw ShapeError("model input: got " + to_string(pixels.dims()) + ", expected " +
                     to_string(model.input_shape));
  }
}

void check_class(const ModelBundle& model, ClassIndex u) {
  if (u >= model.class_count) {
    throw std::out_of_range("class index " + std::to_string(u) + " out of range [0, " +
                            std::to_string(model.class_count) + ")");
  }
}

}  // namespace

Shape ModelBundle::output_shape(std::size_t i) const {
  Shape s = input_shape;
  for (std::size_t l = 0; l <= i && l < layers.size(); ++l) s = layers[l].output_shape(s);
  return s;
}

std::vector<std::pair<std::string, const Tensor*>> ModelBundle::named_weights() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    static constexpr const char* kSuffix[] = {".weight", ".bias"};
    for (std::size_t p = 0; p < params[i].size(); ++p) {
      out.emplace_back(layers[i].name + kSuffix[p], &params[i][p]);
    }
  }
  return out;
}

ModelBundle make_model(std::uint64_t seed) {
  ModelBundle m;
  m.layers = {
      {"conv1", Conv2d{1, 16, 3, 1, 1}},  {"relu1", Relu{}}, {"pool1", MaxPool2x2{}},
      {"conv2", Conv2d{16, 32, 3, 1, 1}}, {"relu2", Relu{}}, {"pool2", MaxPool2x2{}},
      {"conv3", Conv2d{32, 32, 3, 1, 1}}, {"relu3", Relu{}}, {"gap", GlobalAvgPool{}},
      {"fc", Dense{32, kClassCount}},
  };
  m.attribution_layer = kDefaultAttributionLayer;
  m.class_count = kClassCount;

  Rng rng(mix_seed(seed));
  m.params.resize(m.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const auto shapes = m.layers[i].param_shapes();
    if (shapes.empty()) continue;
    const Shape& w = shapes[0];
    const std::size_t fan_in = element_count(w) / w[0];
    m.params[i].push_back(he_uniform(w, fan_in, rng));
    m.params[i].push_back(Tensor(shapes[1]));
  }
  validate_model(m);
  return m;
}

void validate_model(const ModelBundle& model) {
  if (model.layers.empty()) throw std::invalid_argument("model has no layers");
  if (model.params.size() != model.layers.size()) {
    throw std::invalid_argument("model: params/layers length mismatch");
  }
  Shape s = model.input_shape;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    validate(model.layers[i]);
    const auto shapes = model.layers[i].param_shapes();
    if (shapes.size() != model.params[i].size()) {
      throw std::invalid_argument("model: layer '" + model.layers[i].name +
                                  "' has the wrong number of parameter tensors");
    }
    for (std::size_t p = 0; p < shapes.size(); ++p) {
      if (model.params[i][p].dims() != shapes[p]) {
        throw ShapeError("model: layer '" + model.layers[i].name + "' parameter " +
                         std::to_string(p) + " has shape " + to_string(model.params[i][p].dims()) +
                         ", expected " + to_string(shapes[p]));
      }
    }
    s = model.layers[i].output_shape(s);
    if (i == model.attribution_layer && s.size() != 3) {
      throw std::invalid_argument("model: attribution layer '" + model.layers[i].name +
                                  "' output " + to_string(s) + " is not rank 3");
    }
  }
  if (model.attribution_layer >= model.layers.size()) {
    throw std::invalid_argument("model: attribution layer index out of range");
  }
  if (s != Shape{model.class_count}) {
    throw ShapeError("model: final output " + to_string(s) + " does not match class count " +
                     std::to_string(model.class_count));
  }
}

ModelBundle with_attribution_layer(ModelBundle model, std::size_t layer) {
  model.attribution_layer = layer;
  validate_model(model);
  return model;
}

Tensor logits(const ModelBundle& model, const Tensor& pixels) {
  return forward_with_capture(model, pixels).logits;
}

Tensor predict(const ModelBundle& model, const Tensor& pixels) {
  return softmax(logits(model, pixels));
}

Capture forward_with_capture(const ModelBundle& model, const Tensor& pixels) {
  check_pixels(model, pixels);
  Capture cap;
  Tensor x = pixels;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    x = layer_forward(model.layers[i], model.layer_params(i), x);
    if (i == model.attribution_layer) cap.activation = x;
  }
  cap.logits = std::move(x);
  return cap;
}

Tensor head_logits(const ModelBundle& model, const Tensor& activation) {
  if (activation.dims() != model.activation_shape()) {
    throw ShapeError("head input: got " + to_string(activation.dims()) + ", expected " +
                     to_string(model.activation_shape()));
  }
  Tensor x = activation;
  for (std::size_t i = model.attribution_layer + 1; i < model.layers.size(); ++i) {
    x = layer_forward(model.layers[i], model.layer_params(i), x);
  }
  return x;
}

std::vector<Tensor> head_gradients(const ModelBundle& model, const Tensor& activation,
                                   std::span<const ClassIndex> classes) {
  if (activation.dims() != model.activation_shape()) {
    throw ShapeError("head input: got " + to_string(activation.dims()) + ", expected " +
                     to_string(model.activation_shape()));
  }
  for (ClassIndex u : classes) check_class(model, u);

  std::vector<Tensor> inputs;  // inputs[j] feeds layer attribution_layer + 1 + j
  Tensor x = activation;
  for (std::size_t i = model.attribution_layer + 1; i < model.layers.size(); ++i) {
    inputs.push_back(x);
    x = layer_forward(model.layers[i], model.layer_params(i), x);
  }

  std::vector<Tensor> grads;
  grads.reserve(classes.size());
  for (ClassIndex u : classes) {
    Tensor cot(x.dims());
    cot[u] = 1.0;
    for (std::size_t j = inputs.size(); j-- > 0;) {
      const std::size_t layer = model.attribution_layer + 1 + j;
      cot = layer_vjp(model.layers[layer], model.layer_params(layer), inputs[j], cot);
    }
    grads.push_back(std::move(cot));
  }
  return grads;
}

Tensor grad_wrt_activation(const ModelBundle& model, const Tensor& pixels, ClassIndex u) {
  check_class(model, u);
  const Capture cap = forward_with_capture(model, pixels);
  const ClassIndex cls[] = {u};
  return std::move(head_gradients(model, cap.activation, cls).front());
}

ClassIndex argmax(const Tensor& scores) {
  if (scores.empty()) throw std::invalid_argument("argmax of empty tensor");
  return static_cast<ClassIndex>(
      std::distance(scores.values().begin(),
                    std::max_element(scores.values().begin(), scores.values().end())));
}

double accuracy(const ModelBundle& model, const std::vector<LabeledImage>& images) {
  if (images.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& img : images) correct += argmax(logits(model, img.pixels)) == img.label;
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

TrainingResult train(const DatasetSplit& data, const TrainOptions& options) {
  if (data.train.empty()) throw std::invalid_argument("train: training split is empty");
  if (options.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  if (!(options.learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be positive");

  TrainingResult result{make_model(options.seed), {}};
  ModelBundle& model = result.model;
  const std::size_t n_layers = model.layers.size();

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(mix_seed(options.seed ^ 0x5eedf00dULL));

  std::vector<std::vector<Tensor>> grad_sum(n_layers);
  auto reset_grads = [&] {
    for (std::size_t i = 0; i < n_layers; ++i) {
      grad_sum[i].clear();
      for (const auto& p : model.params[i]) grad_sum[i].emplace_back(p.dims());
    }
  };

  std::vector<Tensor> inputs(n_layers);
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span(order));
    double loss_total = 0.0;
    std::size_t correct = 0;

    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      reset_grads();
      for (std::size_t b = start; b < end; ++b) {
        const LabeledImage& img = data.train[order[b]];
        Tensor x = img.pixels;
        for (std::size_t i = 0; i < n_layers; ++i) {
          inputs[i] = x;
          x = layer_forward(model.layers[i], model.layer_params(i), x);
        }
        const Tensor probs = softmax(x);
        const double p_true = std::max(probs[img.label], 1e-300);
        loss_total += -std::log(p_true);
        correct += argmax(x) == img.label;

        Tensor cot = probs;  // d CE / d logits
        cot[img.label] -= 1.0;
        for (std::size_t i = n_layers; i-- > 0;) {
          const bool has_params = !model.params[i].empty();
          LayerGradients g = layer_backward(model.layers[i], model.layer_params(i), inputs[i], cot,
                                            has_params);
          for (std::size_t p = 0; p < g.params.size(); ++p) {
            auto dst = grad_sum[i][p].values();
            const auto src = g.params[p].values();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
          }
          if (i > 0) cot = std::move(g.input);
        }
      }
      const double step = options.learning_rate / static_cast<double>(end - start);
      for (std::size_t i = 0; i < n_layers; ++i) {
        for (std::size_t p = 0; p < model.params[i].size(); ++p) {
          auto w = model.params[i][p].values();
          const auto g = grad_sum[i][p].values();
          for (std::size_t k = 0; k < w.size(); ++k) w[k] -= step * g[k];
        }
      }
    }

    const double mean_loss = loss_total / static_cast<double>(order.size());
    if (!std::isfinite(mean_loss)) {
      throw NumericalError("train: loss diverged at epoch " + std::to_string(epoch));
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = mean_loss;
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    stats.val_accuracy = accuracy(model, data.validation);
    result.history.push_back(stats);
  }
  return result;
}

std::uint64_t ConfusionMatrix::row_sum(ClassIndex u) const {
  std::uint64_t s = 0;
  for (ClassIndex v = 0; v < classes; ++v) s += at(u, v);
  return s;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

ConfusionMatrix confusion_matrix(const ModelBundle& model, const std::vector<LabeledImage>& images) {
  if (images.empty()) throw std::invalid_argument("confusion_matrix: empty evaluation split");
  ConfusionMatrix m(model.class_count);
  for (const auto& img : images) {
    check_class(model, img.label);
    m.at(img.label, argmax(logits(model, img.pixels)))++;
  }
  return m;
}

}  // namespace caselab
