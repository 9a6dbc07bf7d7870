#include "nlcnn/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace nlcnn {

void validate(const TrainConfig& cfg) {
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(cfg.beta1 > 0.0 && cfg.beta1 < 1.0)) throw ConfigError("beta1 must lie in (0, 1)");
    if (!(cfg.beta2 > 0.0 && cfg.beta2 < 1.0)) throw ConfigError("beta2 must lie in (0, 1)");
    if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate))
        throw ConfigError("learning rate must be finite and >= 0");
    if (!(cfg.adam_epsilon > 0.0)) throw ConfigError("adam epsilon must be > 0");
}

std::string RunMetrics::to_csv(bool include_timing) const {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,train_loss,train_acc,test_acc,wall_seconds\n";
    for (const auto& r : rows)
        os << r.epoch << ',' << r.train_loss << ',' << r.train_acc << ',' << r.test_acc << ','
           << (include_timing ? r.wall_seconds : 0.0) << '\n';
    return os.str();
}

template <typename T>
AdamMoments<T> AdamMoments<T>::zeros(std::span<const std::size_t> sizes) {
    AdamMoments out;
    for (std::size_t s : sizes) {
        out.m.emplace_back(s, T(0));
        out.v.emplace_back(s, T(0));
    }
    return out;
}

template <typename T>
void adam_step(ParamRegistry<T>& registry, const GradientSet<T>& grads, AdamMoments<T>& moments, std::size_t t,
               const TrainConfig& cfg) {
    if (t < 1) throw InvalidInput("adam_step: step count must be >= 1");
    if (grads.arrays.size() != registry.size() || moments.m.size() != registry.size() ||
        moments.v.size() != registry.size())
        throw InvalidInput("adam_step: gradients/moments are not congruent with the registry");
    for (std::size_t a = 0; a < registry.size(); ++a) {
        const auto& g = grads.arrays[a];
        if (g.size() != registry[a].values.size() || moments.m[a].size() != g.size() || moments.v[a].size() != g.size())
            throw InvalidInput("adam_step: size mismatch for " + registry[a].name);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!std::isfinite(g[i]))
                throw NumericError("non-finite gradient in " + registry[a].name + " at element " + std::to_string(i));
    }

    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.adam_epsilon);
    const T c1 = T(1) - static_cast<T>(std::pow(cfg.beta1, double(t)));
    const T c2 = T(1) - static_cast<T>(std::pow(cfg.beta2, double(t)));
    for (std::size_t a = 0; a < registry.size(); ++a) {
        auto p = registry[a].values;
        const auto& g = grads.arrays[a];
        auto& m = moments.m[a];
        auto& v = moments.v[a];
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T m_hat = m[i] / c1;
            const T v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

template struct AdamMoments<float>;
template struct AdamMoments<double>;
template void adam_step(ParamRegistry<float>&, const GradientSet<float>&, AdamMoments<float>&, std::size_t,
                        const TrainConfig&);
template void adam_step(ParamRegistry<double>&, const GradientSet<double>&, AdamMoments<double>&, std::size_t,
                        const TrainConfig&);

TrainSession::TrainSession(Network<float>& net, const TrainConfig& cfg)
    : net_(net), cfg_(cfg), moments_(AdamMoments<float>::zeros(net.registry_sizes())) {
    validate(cfg);
}

std::size_t argmax_row(std::span<const float> row) {
    return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

StepResult TrainSession::step(const Tensor4<float>& x, std::span<const int> labels) {
    if (labels.size() != x.n()) throw InvalidInput("step: label count does not match batch size");
    auto fwd = net_.forward(x, Mode::train);
    auto xent = softmax_xent(fwd.logits, one_hot(labels, net_.plan().hp.num_classes));
    if (!std::isfinite(xent.loss)) throw NumericError("non-finite loss at step " + std::to_string(t_ + 1));

    StepResult r{xent.loss, 0, labels.size()};
    for (std::size_t b = 0; b < labels.size(); ++b)
        if (argmax_row(fwd.logits.sample(b)) == static_cast<std::size_t>(labels[b])) ++r.correct;

    auto grads = net_.backward(fwd.cache, xent.grad_logits);
    auto registry = net_.registry();
    adam_step(registry, grads, moments_, ++t_, cfg_);
    net_.commit_batch_stats(fwd.cache);
    return r;
}

EvalResult evaluate(const Network<float>& net, const LabeledSet& data, std::size_t batch_size) {
    check_dataset(net.plan(), data);
    EvalResult r;
    r.total = data.size();
    double loss_sum = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t lo = 0; lo < data.size(); lo += batch_size) {
        const std::size_t hi = std::min(lo + batch_size, data.size());
        idx.resize(hi - lo);
        std::iota(idx.begin(), idx.end(), lo);
        const auto logits = net.infer(data.gather(idx));
        const std::span<const int> labels(data.labels.data() + lo, hi - lo);
        const auto xent = softmax_xent(logits, one_hot(labels, data.num_classes));
        loss_sum += xent.loss * double(hi - lo);
        for (std::size_t b = 0; b < labels.size(); ++b)
            if (argmax_row(logits.sample(b)) == static_cast<std::size_t>(labels[b])) ++r.correct;
    }
    r.loss = loss_sum / double(r.total);
    r.accuracy = double(r.correct) / double(r.total);
    return r;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

void check_dataset(const ModelPlan& plan, const LabeledSet& data) {
    const InputShape& in = plan.hp.input_shape;
    if (data.size() == 0) throw ConfigError("dataset '" + data.name + "' is empty");
    const Shape4 s = data.images.shape();
    if (s.h != in.h || s.w != in.w || s.c != in.c)
        throw ConfigError("dataset '" + data.name + "' has images " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                          "x" + std::to_string(s.c) + ", model expects " + std::to_string(in.h) + "x" +
                          std::to_string(in.w) + "x" + std::to_string(in.c));
    if (data.num_classes != plan.hp.num_classes)
        throw ConfigError("dataset '" + data.name + "' has " + std::to_string(data.num_classes) +
                          " classes, model has " + std::to_string(plan.hp.num_classes));
    for (int l : data.labels)
        if (l < 0 || static_cast<std::size_t>(l) >= plan.hp.num_classes)
            throw ConfigError("dataset '" + data.name + "' has out-of-range label " + std::to_string(l));
}

RunMetrics train(Network<float>& net, const LabeledSet& train_set, const LabeledSet& test_set, const TrainConfig& cfg,
                 const std::function<void(const EpochRow&)>& on_epoch) {
    validate(cfg);
    check_dataset(net.plan(), train_set);
    check_dataset(net.plan(), test_set);

    struct DeterminismGuard {
        bool saved = deterministic();
        ~DeterminismGuard() { set_deterministic(saved); }
    } guard;
    set_deterministic(cfg.deterministic || guard.saved);

    RunMetrics metrics;
    metrics.param_total = net.parameter_count();
    TrainSession session(net, cfg);
    std::mt19937_64 rng(cfg.seed);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const auto order = shuffled_indices(train_set.size(), rng);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::vector<int> labels;
        for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
            const std::size_t hi = std::min(lo + cfg.batch_size, order.size());
            const std::span<const std::size_t> batch(order.data() + lo, hi - lo);
            labels.resize(batch.size());
            for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = train_set.labels[batch[i]];
            const StepResult s = session.step(train_set.gather(batch), labels);
            loss_sum += s.loss * double(s.count);
            correct += s.correct;
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        EpochRow row;
        row.epoch = epoch;
        row.train_loss = loss_sum / double(train_set.size());
        row.train_acc = double(correct) / double(train_set.size());
        row.test_acc = evaluate(net, test_set).accuracy;
        row.wall_seconds = seconds;
        metrics.rows.push_back(row);
        metrics.best_test_acc = std::max(metrics.best_test_acc, row.test_acc);
        metrics.total_train_seconds += seconds;
        if (on_epoch) on_epoch(row);
    }

    return metrics;
}

}  // namespace nlcnn
