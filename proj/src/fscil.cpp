#include "acraft/fscil.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>

#include "acraft/rng.hpp"

namespace acraft {

namespace {

double percent(std::size_t correct, std::size_t total) {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<int> gather_labels(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(ds.labels[i]);
  return out;
}

}  // namespace

PrototypeHead FscilState::head(std::span<const int> classes) const {
  const std::size_t dim = embedding.embedding_dim();
  Tensor centers = Tensor::matrix(classes.size(), dim);
  for (std::size_t r = 0; r < classes.size(); ++r) {
    auto it = prototypes.find(classes[r]);
    if (it == prototypes.end()) {
      throw std::out_of_range("no prototype for class " + std::to_string(classes[r]));
    }
    std::copy(it->second.begin(), it->second.end(), centers.row(r).begin());
  }
  return PrototypeHead{std::move(centers)};
}

FscilState train_base(const SessionSplit& split, const Dataset& ds, const FscilConfig& config,
                      std::uint64_t seed) {
  if (split.base_classes.empty()) throw std::invalid_argument("split has no base classes");
  if (split.base_train.empty()) throw std::invalid_argument("split has no base training data");

  std::map<int, int> head_index;
  for (std::size_t i = 0; i < split.base_classes.size(); ++i) {
    head_index[split.base_classes[i]] = static_cast<int>(i);
  }

  std::vector<std::size_t> widths{ds.dim()};
  widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
  widths.push_back(split.base_classes.size());
  MlpModel model = MlpModel::initialized(widths, derive_seed(seed, {fnv1a("fscil.init")}));

  Rng order_rng(derive_seed(seed, {fnv1a("fscil.order")}));
  std::vector<std::size_t> order = split.base_train;
  const std::size_t batch = std::max<std::size_t>(1, config.batch_size);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      const Tensor x = ds.features.select_rows(rows);
      std::vector<int> y;
      y.reserve(rows.size());
      for (std::size_t r : rows) y.push_back(head_index.at(ds.labels[r]));
      model = sgd_step(std::move(model), grad_params(model, x, y), config.lr);
    }
  }

  FscilState state;
  state.embedding = std::move(model);
  const Tensor emb = state.embedding.embed(ds.features.select_rows(split.base_train));
  const std::size_t dim = emb.cols();
  std::map<int, std::size_t> counts;
  for (std::size_t r = 0; r < split.base_train.size(); ++r) {
    const int c = ds.labels[split.base_train[r]];
    auto& proto = state.prototypes[c];
    proto.resize(dim, 0.0);
    auto e = emb.row(r);
    for (std::size_t k = 0; k < dim; ++k) proto[k] += e[k];
    ++counts[c];
  }
  for (auto& [c, proto] : state.prototypes) {
    for (double& v : proto) v /= static_cast<double>(counts[c]);
  }
  state.seen_classes = split.base_classes;
  return state;
}

FscilState adapt_session(FscilState state, const Tensor& shots, std::span<const int> labels,
                         std::size_t shots_per_class) {
  if (shots.rows() != labels.size()) throw ShapeError("shot rows and label count differ");
  std::map<int, std::size_t> counts;
  for (int c : labels) {
    if (state.prototypes.count(c)) {
      throw std::invalid_argument("class " + std::to_string(c) + " already seen");
    }
    ++counts[c];
  }
  for (const auto& [c, n] : counts) {
    if (n != shots_per_class) {
      throw std::invalid_argument("class " + std::to_string(c) + " has " + std::to_string(n) +
                                  " shots, expected " + std::to_string(shots_per_class));
    }
  }

  const Tensor emb = state.embedding.embed(shots);
  const std::size_t dim = emb.cols();
  std::map<int, std::vector<double>> sums;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    auto& acc = sums[labels[r]];
    acc.resize(dim, 0.0);
    auto e = emb.row(r);
    for (std::size_t k = 0; k < dim; ++k) acc[k] += e[k];
  }
  for (auto& [c, acc] : sums) {
    for (double& v : acc) v /= static_cast<double>(counts[c]);
    state.prototypes.emplace(c, std::move(acc));
    state.seen_classes.push_back(c);
  }
  ++state.session;
  return state;
}

std::vector<int> classify(const FscilState& state, const Tensor& x) {
  if (state.prototypes.empty()) throw std::invalid_argument("no prototypes to classify against");
  const Tensor emb = state.embedding.embed(x);
  std::vector<int> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto e = emb.row(r);
    double best = std::numeric_limits<double>::infinity();
    int best_class = -1;
    // std::map iterates in ascending class order, so strict < keeps the lower index on ties.
    for (const auto& [c, proto] : state.prototypes) {
      if (proto.size() != e.size()) throw std::invalid_argument("prototype dimension mismatch");
      double d2 = 0.0;
      for (std::size_t k = 0; k < e.size(); ++k) d2 += (e[k] - proto[k]) * (e[k] - proto[k]);
      if (d2 < best) {
        best = d2;
        best_class = c;
      }
    }
    out[r] = best_class;
  }
  return out;
}

SessionReport run_protocol(const SessionSplit& split, const Dataset& ds, const Poisoner& poisoner,
                           std::uint64_t seed, const FscilConfig& config,
                           const FscilState* pretrained) {
  FscilState state = pretrained ? *pretrained : train_base(split, ds, config, seed);
  if (state.session != 0) throw std::invalid_argument("pretrained state must be at session 0");
  const std::set<int> base(split.base_classes.begin(), split.base_classes.end());

  SessionReport report;
  auto evaluate = [&](std::size_t session) {
    const std::vector<std::size_t> pool = split.test_pool(session);
    const std::vector<int> predicted = classify(state, ds.features.select_rows(pool));
    std::size_t correct = 0, base_total = 0, base_correct = 0, new_total = 0, new_correct = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const int truth = ds.labels[pool[i]];
      const bool hit = predicted[i] == truth;
      correct += hit;
      if (base.count(truth)) {
        ++base_total;
        base_correct += hit;
      } else {
        ++new_total;
        new_correct += hit;
      }
    }
    report.acc.push_back(percent(correct, pool.size()));
    report.base_acc.push_back(percent(base_correct, base_total));
    report.new_acc.push_back(percent(new_correct, new_total));
  };

  evaluate(0);
  for (std::size_t s = 0; s < split.sessions.size(); ++s) {
    const IncrementalSession& session = split.sessions[s];
    Tensor shots = ds.features.select_rows(session.train);
    const std::vector<int> labels = gather_labels(ds, session.train);
    if (poisoner) {
      const FscilState provisional = adapt_session(state, shots, labels, split.shots);
      const PrototypeHead head = provisional.head(provisional.seen_classes);
      std::map<int, int> row_of;
      for (std::size_t i = 0; i < provisional.seen_classes.size(); ++i) {
        row_of[provisional.seen_classes[i]] = static_cast<int>(i);
      }
      std::vector<int> head_labels;
      head_labels.reserve(labels.size());
      for (int c : labels) head_labels.push_back(row_of.at(c));
      const ModelView view{&state.embedding, &head, nullptr};
      Tensor poisoned = poisoner(shots, head_labels, view);
      require_same_shape(poisoned, shots, "poisoner output");
      if (!poisoned.all_finite()) throw std::domain_error("poisoner produced non-finite values");
      shots = std::move(poisoned);
    }
    state = adapt_session(std::move(state), shots, labels, split.shots);
    evaluate(s + 1);
  }
  report.avg = avg_accuracy(report.acc);
  return report;
}

double avg_accuracy(std::span<const double> accs) {
  if (accs.empty()) throw std::invalid_argument("no accuracies to average");
  return std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
}

double attack_drop(const SessionReport& clean, const SessionReport& attacked) {
  if (clean.sessions() != attacked.sessions()) {
    throw std::invalid_argument("reports cover different session counts");
  }
  return clean.avg - attacked.avg;
}

void write_session_csv(std::ostream& out, const SessionReport& report) {
  out << "session,acc,base_acc,new_acc\n";
  const auto old_precision = out.precision(17);
  for (std::size_t s = 0; s < report.sessions(); ++s) {
    out << s << ',' << report.acc[s] << ',' << report.base_acc[s] << ',' << report.new_acc[s]
        << '\n';
  }
  out.precision(old_precision);
}

}  // namespace acraft
