#include "latnav/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "latnav/adam.hpp"
#include "latnav/random.hpp"

namespace latnav {

namespace {

constexpr std::size_t kProjectionChunk = 256;

std::vector<std::size_t> layer_sizes(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

std::vector<int> labels_of(const LabeledDataset& data, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.images.at(i).label);
  return out;
}

Tensor flatten_rows(const LabeledDataset& data, std::span<const std::size_t> indices) {
  const std::size_t p = data.pixel_count();
  Tensor out = Tensor::matrix(indices.size(), p);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const Tensor& px = data.images.at(indices[r]).pixels;
    std::copy(px.values().begin(), px.values().end(), out.row(r).begin());
  }
  return out;
}

ad::Var discriminator_logits(ad::Graph& g, const BoundMlp& d, ad::Var images, const Tensor& labels_one_hot) {
  const ad::Var cond = g.constant_view(labels_one_hot);
  return mlp_forward(g, d, ad::concat_cols(g, images, cond)).logits;
}

void check_finite_loss(double value, const char* what, std::uint64_t seed, std::size_t step) {
  if (!std::isfinite(value)) throw TrainingDivergedError(std::string(what) + " became non-finite", seed, step);
}

void guarded_adam(Mlp& net, const ad::Graph& g, const BoundMlp& bound, AdamState& state, double lr, const char* what,
                  std::uint64_t seed, std::size_t step) {
  const auto grads = mlp_gradients(g, bound);
  auto params = net.parameters();
  try {
    adam_step(params, grads, state, lr);
  } catch (const NonFiniteError&) {
    throw TrainingDivergedError(std::string(what) + " gradient became non-finite", seed, step);
  }
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

// --- Generator / Classifier --------------------------------------------------

Tensor one_hot(std::span<const int> labels, std::size_t n_classes) {
  Tensor out = Tensor::matrix(labels.size(), n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " outside [0, " +
                                  std::to_string(n_classes) + ")");
    }
    out.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

ad::Var Generator::forward(ad::Graph& g, const BoundMlp& bound, ad::Var latents, std::span<const int> labels) const {
  if (g.shape(latents).size() != 2 || g.value(latents).cols() != latent_dim) {
    throw std::invalid_argument("generator expects latents of width " + std::to_string(latent_dim) + ", got " +
                                shape_string(g.shape(latents)));
  }
  if (labels.size() != g.value(latents).rows()) {
    throw std::invalid_argument("generator: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(g.value(latents).rows()) + " latents");
  }
  const ad::Var cond = g.constant(one_hot(labels, n_classes));
  return ad::tanh(g, mlp_forward(g, bound, ad::concat_cols(g, latents, cond)).logits);
}

Tensor Generator::generate(const Tensor& latents, std::span<const int> labels) const {
  ad::Graph g;
  const BoundMlp bound = bind_mlp(g, net, false);
  const ad::Var out = forward(g, bound, g.constant_view(latents), labels);
  return g.value(out);
}

ToyImage Generator::generate_image(const LatentPoint& w, int label) const {
  const int labels[] = {label};
  Tensor flat = generate(Tensor::row_vector(w.values), labels);
  ToyImage img;
  img.pixels = flat.reshaped({height, width});
  img.label = label;
  img.origin = Origin::synthetic;
  return img;
}

Tensor Classifier::features(const Tensor& inputs) const {
  Tensor f = mlp_penultimate(net, inputs);
  for (std::size_t r = 0; r < f.rows(); ++r) {
    auto row = f.row(r);
    double norm = 0.0;
    for (double v : row) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& v : row) v /= norm;
    }
  }
  return f;
}

std::vector<int> Classifier::predict(const Tensor& inputs) const {
  const Tensor logits_ = logits(inputs);
  std::vector<int> out(logits_.rows());
  for (std::size_t r = 0; r < logits_.rows(); ++r) out[r] = static_cast<int>(argmax_row(logits_.row(r)));
  return out;
}

double Classifier::accuracy(const Samples& samples) const {
  if (samples.size() == 0) return 0.0;
  const auto pred = predict(samples.inputs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == samples.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

// --- GAN ---------------------------------------------------------------------

GanResult train_tiny_gan(const LabeledDataset& data, std::span<const std::size_t> indices, const GanConfig& config) {
  if (indices.empty()) throw std::invalid_argument("train_tiny_gan: no training images");
  if (config.batch == 0) throw std::invalid_argument("train_tiny_gan: batch must be positive");
  const std::size_t p = data.pixel_count();
  const std::size_t c = data.n_classes;

  Rng init(mix_seed(config.seed, 0x6a));
  GanResult result;
  Generator& gen = result.generator;
  gen.latent_dim = config.latent_dim;
  gen.n_classes = c;
  gen.height = data.height;
  gen.width = data.width;
  gen.net = make_mlp(layer_sizes(config.latent_dim + c, config.generator_hidden, p), Activation::leaky_relu, init);
  result.discriminator = make_mlp(layer_sizes(p + c, config.discriminator_hidden, 1), Activation::leaky_relu, init);
  Mlp& disc = result.discriminator;

  const Tensor real_all = flatten_rows(data, indices);
  const std::vector<int> labels_all = labels_of(data, indices);

  Rng rng(mix_seed(config.seed, 0x6b));
  std::uniform_int_distribution<std::size_t> pick(0, indices.size() - 1);
  AdamState g_state, d_state;
  g_state.config.beta1 = d_state.config.beta1 = config.beta1;

  auto draw_real = [&](Tensor& x, std::vector<int>& y) {
    x = Tensor::matrix(config.batch, p);
    y.resize(config.batch);
    for (std::size_t b = 0; b < config.batch; ++b) {
      const std::size_t i = pick(rng);
      std::copy(real_all.row(i).begin(), real_all.row(i).end(), x.row(b).begin());
      y[b] = labels_all[i];
    }
  };
  auto draw_latents = [&](std::size_t n) {
    Tensor z = Tensor::matrix(n, config.latent_dim);
    for (double& v : z.values()) v = standard_normal(rng);
    return z;
  };

  Tensor x_real, z;
  std::vector<int> y_real, y_fake;
  for (std::size_t step = 0; step < config.steps; ++step) {
    // Discriminator step.
    draw_real(x_real, y_real);
    z = draw_latents(config.batch);
    y_fake.resize(config.batch);
    for (int& y : y_fake) y = labels_all[pick(rng)];
    const Tensor fake = gen.generate(z, y_fake);
    const Tensor cond_real = one_hot(y_real, c), cond_fake = one_hot(y_fake, c);
    double d_loss = 0.0;
    {
      ad::Graph g;
      const BoundMlp bd = bind_mlp(g, disc, true);
      const ad::Var lr_ = discriminator_logits(g, bd, g.constant_view(x_real), cond_real);
      const ad::Var lf = discriminator_logits(g, bd, g.constant_view(fake), cond_fake);
      const ad::Var loss =
          ad::add(g, ad::mean(g, ad::softplus(g, ad::scale(g, lr_, -1.0))), ad::mean(g, ad::softplus(g, lf)));
      d_loss = g.value(loss).item();
      check_finite_loss(d_loss, "discriminator loss", config.seed, step);
      g.backward(loss);
      guarded_adam(disc, g, bd, d_state, config.lr, "discriminator", config.seed, step);
    }
    // Generator step (non-saturating).
    double g_loss = 0.0;
    {
      z = draw_latents(config.batch);
      ad::Graph g;
      const BoundMlp bg = bind_mlp(g, gen.net, true);
      const BoundMlp bd = bind_mlp(g, disc, false);
      const ad::Var images = gen.forward(g, bg, g.constant_view(z), y_fake);
      const ad::Var logits = discriminator_logits(g, bd, images, cond_fake);
      const ad::Var loss = ad::mean(g, ad::softplus(g, ad::scale(g, logits, -1.0)));
      g_loss = g.value(loss).item();
      check_finite_loss(g_loss, "generator loss", config.seed, step);
      g.backward(loss);
      guarded_adam(gen.net, g, bg, g_state, config.lr, "generator", config.seed, step);
    }
    if (step % 100 == 0 || step + 1 == config.steps) result.log.push_back({step, d_loss, g_loss});
  }

  // Held-out check of how well D still separates real from generated images.
  const std::size_t n_check = std::min<std::size_t>(256, indices.size());
  Tensor xr;
  std::vector<int> yr, yf;
  xr = Tensor::matrix(n_check, p);
  yr.resize(n_check);
  yf.resize(n_check);
  for (std::size_t b = 0; b < n_check; ++b) {
    const std::size_t i = pick(rng);
    std::copy(real_all.row(i).begin(), real_all.row(i).end(), xr.row(b).begin());
    yr[b] = labels_all[i];
    yf[b] = labels_all[pick(rng)];
  }
  const Tensor xf = gen.generate(draw_latents(n_check), yf);
  auto disc_scores = [&](const Tensor& x, const std::vector<int>& y) {
    Tensor in = Tensor::matrix(x.rows(), p + c);
    const Tensor oh = one_hot(y, c);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      std::copy(x.row(r).begin(), x.row(r).end(), in.row(r).begin());
      std::copy(oh.row(r).begin(), oh.row(r).end(), in.row(r).begin() + static_cast<std::ptrdiff_t>(p));
    }
    return mlp_logits(disc, in);
  };
  const Tensor sr = disc_scores(xr, yr), sf = disc_scores(xf, yf);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n_check; ++i) correct += (sr[i] > 0.0) + (sf[i] <= 0.0);
  result.final_discriminator_accuracy = static_cast<double>(correct) / static_cast<double>(2 * n_check);
  return result;
}

// --- classifiers ------------------------------------------------------------------

TrainedClassifier fit_classifier(const Samples& train, const Samples& val, std::size_t n_outputs,
                                 const ClassifierConfig& config) {
  if (train.size() == 0) throw std::invalid_argument("fit_classifier: empty training set");
  if (n_outputs < 2) throw std::invalid_argument("fit_classifier: need at least two classes");
  const std::set<int> distinct(train.labels.begin(), train.labels.end());
  if (distinct.size() < 2) throw std::invalid_argument("fit_classifier: training labels contain a single class");
  for (int y : train.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= n_outputs) {
      throw std::invalid_argument("fit_classifier: label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(n_outputs) + ")");
    }
  }
  if (config.batch == 0) throw std::invalid_argument("fit_classifier: batch must be positive");

  const std::size_t p = train.inputs.cols();
  Rng init(mix_seed(config.seed, 0xc1));
  TrainedClassifier out;
  out.model.net = make_mlp(layer_sizes(p, config.hidden, n_outputs), Activation::relu, init);
  Mlp& net = out.model.net;

  Rng rng(mix_seed(config.seed, 0xc2));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  seeded_shuffle(order, rng);
  std::size_t cursor = 0;

  AdamState state;
  double best_val = -1.0;
  Mlp best = net;
  std::size_t best_step = 0;
  const std::size_t eval_every = std::max<std::size_t>(1, config.eval_every);
  auto evaluate = [&](std::size_t step) {
    const double acc = val.size() == 0 ? 0.0 : out.model.accuracy(val);
    if (acc >= best_val) {
      best_val = acc;
      best = net;
      best_step = step;
    }
  };

  const std::size_t batch = std::min(config.batch, train.size());
  Tensor x = Tensor::matrix(batch, p);
  std::vector<int> y(batch);
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        seeded_shuffle(order, rng);
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      std::copy(train.inputs.row(i).begin(), train.inputs.row(i).end(), x.row(b).begin());
      y[b] = train.labels[i];
    }
    if (config.input_noise > 0.0) {
      for (double& v : x.values()) v += config.input_noise * standard_normal(rng);
    }
    ad::Graph g;
    const BoundMlp bound = bind_mlp(g, net, true);
    const ad::Var logits = mlp_forward(g, bound, g.constant_view(x)).logits;
    const ad::Var loss = ad::mean(g, ad::cross_entropy_rows(g, logits, y));
    check_finite_loss(g.value(loss).item(), "classifier loss", config.seed, step);
    g.backward(loss);
    guarded_adam(net, g, bound, state, config.lr, "classifier", config.seed, step);
    if ((step + 1) % eval_every == 0) evaluate(step + 1);
  }
  if (config.steps % eval_every != 0 || config.steps == 0) evaluate(config.steps);

  net = best;
  out.selected_step = best_step;
  out.val_accuracy = std::max(0.0, best_val);
  out.train_accuracy = out.model.accuracy(train);
  return out;
}

TrainedClassifier train_classifier(const LabeledDataset& data, ClassifierTarget target,
                                   const ClassifierConfig& config) {
  if (target == ClassifierTarget::label) {
    const Samples train = make_samples(data, data.train, LabelKind::label);
    const Samples val = make_samples(data, data.val, LabelKind::label);
    return fit_classifier(train, val, data.n_classes, config);
  }

  std::vector<int> ids;
  for (std::size_t i : data.train) ids.push_back(data.images.at(i).identity);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 2) {
    throw std::invalid_argument("train_classifier: identity task needs at least two training identities, got " +
                                std::to_string(ids.size()));
  }
  auto remap = [&](Samples& s) {
    for (int& y : s.labels) {
      const auto it = std::lower_bound(ids.begin(), ids.end(), y);
      if (it == ids.end() || *it != y) {
        throw std::invalid_argument("train_classifier: identity " + std::to_string(y) + " is not a training identity");
      }
      y = static_cast<int>(it - ids.begin());
    }
  };

  Samples real = make_samples(data, data.train, LabelKind::identity);
  Samples train = real;
  if (!data.projections.empty()) {
    train = concat_samples(real, make_samples(data, data.projections, LabelKind::identity));
  }
  remap(train);

  Samples val = real;
  remap(val);
  Rng noise(mix_seed(config.seed, 0x7a));
  for (double& v : val.inputs.values()) v += config.identity_val_noise * standard_normal(noise);
  enforce_pixel_range(val.inputs);

  TrainedClassifier out = fit_classifier(train, val, ids.size(), config);
  out.output_identity = std::move(ids);
  return out;
}

// --- projection ------------------------------------------------------------------

namespace {

struct RowState {
  std::vector<double> w, best_w, m, v, best_m, best_v, best_grad;
  double best_loss = std::numeric_limits<double>::infinity();
  double lr = 0.0;
  std::uint64_t t = 0, best_t = 0;
  bool dead = false;
  std::vector<double> accepted;
};

// Runs the per-row step-rejecting Adam loop for one chunk of rows.
void project_chunk(const Generator& gen, const Tensor& targets, std::span<const int> labels,
                   std::vector<RowState>& rows, const ProjectionConfig& config) {
  const std::size_t n = rows.size();
  const std::size_t d = gen.latent_dim;
  const double inv_p = 1.0 / static_cast<double>(gen.pixel_count());
  const AdamConfig adam;
  Tensor w = Tensor::matrix(n, d);

  for (std::size_t s = 0; s < config.steps; ++s) {
    for (std::size_t r = 0; r < n; ++r) std::copy(rows[r].w.begin(), rows[r].w.end(), w.row(r).begin());
    ad::Graph g;
    const BoundMlp bound = bind_mlp(g, gen.net, false);
    const ad::Var wv = g.variable(w);
    const ad::Var img = gen.forward(g, bound, wv, labels);
    const ad::Var diff = ad::sub(g, img, g.constant_view(targets));
    const ad::Var per_row = ad::scale(g, ad::row_sum(g, ad::square(g, diff)), inv_p);
    g.backward(ad::sum(g, per_row));
    const Tensor& losses = g.value(per_row);
    const Tensor& grads = g.grad(wv);

    for (std::size_t r = 0; r < n; ++r) {
      RowState& st = rows[r];
      if (st.dead) continue;
      const double loss = losses[r];
      const auto grad = grads.row(r);
      const bool finite = std::isfinite(loss) && std::all_of(grad.begin(), grad.end(), [](double x) {
                            return std::isfinite(x);
                          });
      const bool last = s + 1 == config.steps;
      if (finite && loss <= st.best_loss) {
        st.best_loss = loss;
        st.best_w = st.w;
        st.best_grad.assign(grad.begin(), grad.end());
        st.best_m = st.m;
        st.best_v = st.v;
        st.best_t = st.t;
        if (config.record_losses) st.accepted.push_back(loss);
      } else {
        if (!std::isfinite(st.best_loss)) {
          st.dead = true;
          continue;
        }
        // Reject: return to the best point and retry its update at half the rate.
        st.w = st.best_w;
        st.m = st.best_m;
        st.v = st.best_v;
        st.t = st.best_t;
        st.lr *= 0.5;
      }
      if (!last) {
        ++st.t;
        adam_update(st.w, st.best_grad, st.m, st.v, st.t, adam, st.lr);
      }
    }
  }
}

}  // namespace

std::vector<Projection> project_images(std::span<const ToyImage> images, const Generator& gen,
                                       const ProjectionConfig& config) {
  if (config.restarts == 0) throw std::invalid_argument("project_images: restarts must be positive");
  if (config.steps == 0) throw std::invalid_argument("project_images: steps must be positive");
  const std::size_t d = gen.latent_dim;
  const std::size_t p = gen.pixel_count();
  const std::size_t total = images.size() * config.restarts;

  std::vector<Projection> out(images.size());
  for (std::size_t begin = 0; begin < total; begin += kProjectionChunk) {
    const std::size_t end = std::min(total, begin + kProjectionChunk);
    const std::size_t n = end - begin;
    std::vector<RowState> rows(n);
    std::vector<int> labels(n);
    Tensor targets = Tensor::matrix(n, p);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t img_idx = (begin + k) / config.restarts;
      const std::size_t restart = (begin + k) % config.restarts;
      const ToyImage& img = images[img_idx];
      if (img.pixels.size() != p) {
        throw std::invalid_argument("project_images: image has " + std::to_string(img.pixels.size()) +
                                    " pixels, generator produces " + std::to_string(p));
      }
      const std::uint64_t key = img.identity >= 0 ? static_cast<std::uint64_t>(img.identity) : img_idx;
      Rng rng(mix_seed(config.seed, key, restart));
      RowState& st = rows[k];
      st.w.resize(d);
      for (double& v : st.w) v = standard_normal(rng);
      st.m.assign(d, 0.0);
      st.v.assign(d, 0.0);
      st.lr = config.lr;
      labels[k] = img.label;
      std::copy(img.pixels.values().begin(), img.pixels.values().end(), targets.row(k).begin());
    }
    project_chunk(gen, targets, labels, rows, config);
    for (std::size_t k = 0; k < n; ++k) {
      Projection& proj = out[(begin + k) / config.restarts];
      RowState& st = rows[k];
      const bool ok = !st.dead && std::isfinite(st.best_loss);
      proj.restart_latents.push_back(LatentPoint{ok ? st.best_w : st.w});
      proj.restart_errors.push_back(ok ? st.best_loss : std::numeric_limits<double>::infinity());
      if (config.record_losses) proj.accepted_losses.push_back(std::move(st.accepted));
    }
  }

  for (std::size_t i = 0; i < out.size(); ++i) {
    Projection& proj = out[i];
    const auto best = std::min_element(proj.restart_errors.begin(), proj.restart_errors.end());
    if (!std::isfinite(*best)) {
      throw std::runtime_error("project_images: every restart diverged for image " + std::to_string(i));
    }
    proj.best_restart = static_cast<std::size_t>(best - proj.restart_errors.begin());
    proj.latent = proj.restart_latents[proj.best_restart];
    proj.error = *best;
  }
  return out;
}

Projection project_image(const ToyImage& image, const Generator& gen, std::size_t restarts, std::size_t steps,
                         std::uint64_t seed) {
  ProjectionConfig config;
  config.restarts = restarts;
  config.steps = steps;
  config.seed = seed;
  return project_images(std::span<const ToyImage>(&image, 1), gen, config).front();
}

LabeledDataset augment_identity_with_projections(const LabeledDataset& data, const Generator& gen,
                                                 const AugmentationConfig& config,
                                                 std::span<const Projection> projections) {
  LabeledDataset out = data;
  if (!config.enabled) return out;
  if (config.per_identity > config.projection.restarts) {
    throw std::invalid_argument("augment_identity_with_projections: per_identity exceeds restarts");
  }
  std::vector<Projection> computed;
  if (projections.empty()) {
    std::vector<ToyImage> train;
    for (std::size_t i : data.train) train.push_back(data.images[i]);
    computed = project_images(train, gen, config.projection);
    projections = computed;
  }
  if (projections.size() != data.train.size()) {
    throw std::invalid_argument("augment_identity_with_projections: " + std::to_string(projections.size()) +
                                " projections for " + std::to_string(data.train.size()) + " training images");
  }
  for (std::size_t k = 0; k < data.train.size(); ++k) {
    const ToyImage& src = data.images[data.train[k]];
    const Projection& proj = projections[k];
    if (proj.restart_latents.size() < config.per_identity) {
      throw std::invalid_argument("augment_identity_with_projections: projection has too few restarts");
    }
    for (std::size_t r = 0; r < config.per_identity; ++r) {
      const LatentPoint& w = std::isfinite(proj.restart_errors[r]) ? proj.restart_latents[r] : proj.latent;
      ToyImage img = gen.generate_image(w, src.label);
      img.identity = src.identity;
      img.origin = Origin::projection;
      out.projections.push_back(out.images.size());
      out.images.push_back(std::move(img));
    }
  }
  return out;
}

// --- checkpoints -------------------------------------------------------------------

std::string_view activation_name(Activation a) noexcept {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::leaky_relu: return "leaky_relu";
  }
  return "relu";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  if (name == "leaky_relu") return Activation::leaky_relu;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

void write_checkpoint(std::ostream& out, const Mlp& net, const CheckpointInfo& info) {
  out << "latnav-checkpoint 1\n";
  out << "kind " << info.kind << "\n";
  out << "seed " << info.seed << "\n";
  out << "config_hash " << (info.config_hash.empty() ? "-" : info.config_hash) << "\n";
  out << "activation " << activation_name(net.activation) << "\n";
  for (const auto& [k, v] : info.meta) out << "meta " << k << " " << v << "\n";
  out << "layers " << net.layers.size() << "\n";
  char buf[32];
  for (const Tensor* t : net.parameters()) {
    out << "tensor " << t->rows() << " " << t->cols() << "\n";
    for (std::size_t r = 0; r < t->rows(); ++r) {
      for (std::size_t c = 0; c < t->cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", t->at(r, c));
        out << (c ? " " : "") << buf;
      }
      out << "\n";
    }
  }
  if (!out) throw std::runtime_error("write_checkpoint: stream error");
}

Mlp read_checkpoint(std::istream& in, CheckpointInfo& info) {
  auto fail = [](const std::string& what) { throw std::runtime_error("read_checkpoint: " + what); };
  std::string line;
  if (!std::getline(in, line) || line != "latnav-checkpoint 1") fail("bad magic line");
  Mlp net;
  std::size_t n_layers = 0;
  bool have_layers = false;
  while (!have_layers && std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "kind") {
      ls >> info.kind;
    } else if (key == "seed") {
      ls >> info.seed;
    } else if (key == "config_hash") {
      ls >> info.config_hash;
      if (info.config_hash == "-") info.config_hash.clear();
    } else if (key == "activation") {
      std::string a;
      ls >> a;
      net.activation = parse_activation(a);
    } else if (key == "meta") {
      std::string k, v;
      ls >> k >> v;
      info.meta[k] = v;
    } else if (key == "layers") {
      ls >> n_layers;
      have_layers = true;
    } else {
      fail("unexpected header key '" + key + "'");
    }
    if (ls.fail()) fail("malformed header line '" + line + "'");
  }
  if (!have_layers || n_layers == 0) fail("missing layers");
  net.layers.resize(n_layers);
  for (Tensor* t : net.parameters()) {
    std::string tag;
    std::size_t rows = 0, cols = 0;
    if (!(in >> tag >> rows >> cols) || tag != "tensor") fail("missing tensor header");
    *t = Tensor::matrix(rows, cols);
    for (double& v : t->values()) {
      if (!(in >> v)) fail("truncated tensor data");
    }
  }
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& layer = net.layers[l];
    if (layer.bias.rows() != 1 || layer.bias.cols() != layer.weight.cols()) fail("bias shape mismatch");
    if (l > 0 && net.layers[l - 1].weight.cols() != layer.weight.rows()) fail("layer shapes do not chain");
  }
  return net;
}

void save_generator(const std::filesystem::path& path, const Generator& g, std::uint64_t seed,
                    const std::string& config_hash) {
  CheckpointInfo info{"generator", seed, config_hash, {}};
  info.meta["latent_dim"] = std::to_string(g.latent_dim);
  info.meta["n_classes"] = std::to_string(g.n_classes);
  info.meta["height"] = std::to_string(g.height);
  info.meta["width"] = std::to_string(g.width);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_checkpoint(out, g.net, info);
}

Generator load_generator(const std::filesystem::path& path, CheckpointInfo* info_out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CheckpointInfo info;
  Generator g;
  g.net = read_checkpoint(in, info);
  if (info.kind != "generator") throw std::runtime_error(path.string() + " is not a generator checkpoint");
  auto meta = [&](const char* key) -> std::size_t {
    const auto it = info.meta.find(key);
    if (it == info.meta.end()) throw std::runtime_error(path.string() + ": missing meta " + key);
    return std::stoul(it->second);
  };
  g.latent_dim = meta("latent_dim");
  g.n_classes = meta("n_classes");
  g.height = meta("height");
  g.width = meta("width");
  if (g.net.input_dim() != g.latent_dim + g.n_classes || g.net.output_dim() != g.height * g.width) {
    throw std::runtime_error(path.string() + ": generator shapes disagree with its metadata");
  }
  if (info_out != nullptr) *info_out = std::move(info);
  return g;
}

void save_classifier(const std::filesystem::path& path, const Classifier& c, std::uint64_t seed,
                     const std::string& config_hash, const std::map<std::string, std::string>& meta) {
  CheckpointInfo info{"classifier", seed, config_hash, meta};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_checkpoint(out, c.net, info);
}

Classifier load_classifier(const std::filesystem::path& path, CheckpointInfo* info_out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CheckpointInfo info;
  Classifier c{read_checkpoint(in, info)};
  if (info.kind != "classifier") throw std::runtime_error(path.string() + " is not a classifier checkpoint");
  if (info_out != nullptr) *info_out = std::move(info);
  return c;
}

}  // namespace latnav
