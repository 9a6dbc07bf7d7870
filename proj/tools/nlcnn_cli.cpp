// nlcnn: describe, train, evaluate and sweep NL-CNN models.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data or file
// error, 3 numeric failure during training.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"

#include "nlcnn/datasets.hpp"
#include "nlcnn/error.hpp"
#include "nlcnn/model_io.hpp"
#include "nlcnn/model_plan.hpp"
#include "nlcnn/network.hpp"
#include "nlcnn/trainer.hpp"

namespace fs = std::filesystem;
using namespace nlcnn;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ArchFlags {
    double k = 2.0;
    std::size_t width = 20;
    std::string nl = "2,2";
    bool separ = false;
    bool flat = false;
    bool add_layer = false;
};

struct DataFlags {
    std::string dataset = "idx";
    std::string data_dir;
    std::size_t limit_train = 0;
    std::size_t limit_test = 0;
};

struct TrainFlags {
    std::size_t epochs = 20;
    std::size_t batch_size = 500;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    bool deterministic = false;
};

std::vector<long long> integers_in(const std::string& text) {
    static const std::regex number(R"(-?\d+)");
    std::vector<long long> out;
    for (auto it = std::sregex_iterator(text.begin(), text.end(), number); it != std::sregex_iterator(); ++it)
        out.push_back(std::stoll(it->str()));
    return out;
}

std::pair<std::size_t, std::size_t> parse_nl(const std::string& text) {
    const auto v = integers_in(text);
    if (v.size() != 2 || v[0] < 1 || v[1] < 1) throw UsageError("--nl expects two positive integers such as 2,2");
    return {std::size_t(v[0]), std::size_t(v[1])};
}

// "(1,1),(2,1)" or "1,1;2,1": integers taken pairwise.
std::vector<std::pair<std::size_t, std::size_t>> parse_nl_list(const std::string& text) {
    const auto v = integers_in(text);
    if (v.empty()) throw UsageError("--nl-list is empty");
    if (v.size() % 2 != 0) throw UsageError("--nl-list must hold (nl1,nl2) pairs");
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < v.size(); i += 2) {
        if (v[i] < 1 || v[i + 1] < 1) throw UsageError("--nl-list entries must be >= 1");
        out.emplace_back(std::size_t(v[i]), std::size_t(v[i + 1]));
    }
    return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const std::string& flag) {
    std::vector<T> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (item.empty()) continue;
        std::istringstream is(item);
        T v{};
        if (!(is >> v) || !is.eof()) throw UsageError(flag + ": cannot parse '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError(flag + " is empty");
    return out;
}

HyperParams make_hp(const ArchFlags& a, InputShape input, std::size_t classes) {
    HyperParams hp;
    hp.input_shape = input;
    hp.num_classes = classes;
    hp.k = a.k;
    hp.width = a.width;
    std::tie(hp.nl1, hp.nl2) = parse_nl(a.nl);
    hp.separ = a.separ;
    hp.flat = a.flat;
    hp.add_layer = a.add_layer;
    return hp;
}

DatasetKind dataset_kind(const std::string& name) {
    if (name == "idx") return DatasetKind::idx;
    if (name == "cifar10") return DatasetKind::cifar10;
    throw UsageError("--dataset must be idx or cifar10");
}

InputShape default_input(DatasetKind kind) { return kind == DatasetKind::idx ? InputShape{28, 28, 1} : InputShape{32, 32, 3}; }

fs::path data_dir(const DataFlags& d) {
    if (!d.data_dir.empty()) return d.data_dir;
    if (const char* env = std::getenv("NLCNN_DATA_DIR"); env && *env) return env;
    throw UsageError("no data directory: pass --data-dir or set NLCNN_DATA_DIR");
}

InputShape shape_of(const LabeledSet& s) { return {s.images.h(), s.images.w(), s.images.c()}; }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    f << text;
    if (!f) throw Error("failed writing " + path.string());
}

void add_arch_flags(CLI::App* cmd, ArchFlags& a) {
    cmd->add_option("--width", a.width, "Filters in the first macro-layer")->capture_default_str();
    cmd->add_option("--k", a.k, "Per-macro-layer filter expansion factor")->capture_default_str();
    cmd->add_option("--nl", a.nl, "Cascade depths of macro-layers 1 and 2, as a,b")->capture_default_str();
    cmd->add_flag("--separ", a.separ, "Use depthwise-separable convolutions");
    cmd->add_flag("--flat", a.flat, "Flatten head (default: global average pooling)");
    cmd->add_flag("--add-layer", a.add_layer, "Append a fourth macro-layer");
}

void add_data_flags(CLI::App* cmd, DataFlags& d) {
    cmd->add_option("--dataset", d.dataset, "Dataset format: idx or cifar10")->capture_default_str();
    cmd->add_option("--data-dir", d.data_dir, "Dataset directory (default: $NLCNN_DATA_DIR)");
    cmd->add_option("--limit-train", d.limit_train, "Use only the first N training samples (0 = all)")
        ->capture_default_str();
    cmd->add_option("--limit-test", d.limit_test, "Use only the first N test samples (0 = all)")->capture_default_str();
}

void add_train_flags(CLI::App* cmd, TrainFlags& t) {
    cmd->add_option("--epochs", t.epochs, "Training epochs")->capture_default_str();
    cmd->add_option("--batch-size", t.batch_size, "Mini-batch size")->capture_default_str();
    cmd->add_option("--lr", t.lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--seed", t.seed, "Seed for initialization and shuffling")->capture_default_str();
    cmd->add_flag("--deterministic", t.deterministic,
                  "Single-threaded bit-reproducible run; timing columns are written as 0");
}

TrainConfig make_cfg(const TrainFlags& t) {
    TrainConfig cfg;
    cfg.epochs = t.epochs;
    cfg.batch_size = t.batch_size;
    cfg.learning_rate = t.lr;
    cfg.seed = t.seed;
    cfg.deterministic = t.deterministic;
    validate(cfg);
    return cfg;
}

struct Splits {
    LabeledSet train, test;
};

Splits load_splits(const DataFlags& d) {
    const auto kind = dataset_kind(d.dataset);
    const auto dir = data_dir(d);
    return {load_split(kind, dir, Split::train).head(d.limit_train), load_split(kind, dir, Split::test).head(d.limit_test)};
}

int run_describe(const ArchFlags& a, const std::string& dataset, const std::string& format) {
    if (format != "text" && format != "csv") throw UsageError("--format must be text or csv");
    const auto plan = build_plan(make_hp(a, default_input(dataset_kind(dataset)), 10));
    const auto report = count_params(plan);
    std::cout << (format == "csv" ? format_report_csv(report) : format_report_text(plan, report));
    return kOk;
}

int run_train(const ArchFlags& a, const DataFlags& d, const TrainFlags& t, const std::string& out,
              const std::string& metrics_path) {
    const TrainConfig cfg = make_cfg(t);
    const auto data = load_splits(d);
    const auto plan = build_plan(make_hp(a, shape_of(data.train), data.train.num_classes));
    auto net = Network<float>::init(plan, t.seed);
    std::cerr << "params " << net.parameter_count() << ", train " << data.train.size() << ", test "
              << data.test.size() << "\n";
    const auto metrics = train(net, data.train, data.test, cfg, [&](const EpochRow& r) {
        std::fprintf(stderr, "epoch %zu/%zu loss %.4f train_acc %.4f test_acc %.4f (%.1fs)\n", r.epoch, cfg.epochs,
                     r.train_loss, r.train_acc, r.test_acc, r.wall_seconds);
    });
    // Outputs are written only after training succeeded. Deterministic runs
    // record no wall time so that repeated runs give identical files.
    RunMetrics recorded = metrics;
    if (cfg.deterministic) {
        recorded.total_train_seconds = 0.0;
        for (auto& r : recorded.rows) r.wall_seconds = 0.0;
    }
    save_model(net, &recorded, out);
    write_text(metrics_path, metrics.to_csv(!cfg.deterministic));
    std::printf("params %zu\nfinal_test_acc %.17g\nbest_test_acc %.17g\ntrain_seconds %.3f\n", metrics.param_total,
                metrics.rows.empty() ? 0.0 : metrics.rows.back().test_acc, metrics.best_test_acc,
                metrics.total_train_seconds);
    return kOk;
}

struct SweepFlags {
    std::string nl_list = "(2,2)";
    std::string width_list = "20";
    std::string k_list = "2";
    std::string flat_list = "1";
    std::string separ_list = "0";
    bool count_only = false;
    std::string out;
};

int run_sweep(const SweepFlags& s, const DataFlags& d, const TrainFlags& t, bool add_layer) {
    const auto nls = parse_nl_list(s.nl_list);
    const auto widths = parse_list<std::size_t>(s.width_list, "--width-list");
    const auto ks = parse_list<double>(s.k_list, "--k-list");
    const auto flats = parse_list<int>(s.flat_list, "--flat-list");
    const auto separs = parse_list<int>(s.separ_list, "--separ-list");
    for (int v : flats)
        if (v != 0 && v != 1) throw UsageError("--flat-list entries must be 0 or 1");
    for (int v : separs)
        if (v != 0 && v != 1) throw UsageError("--separ-list entries must be 0 or 1");

    const TrainConfig cfg = make_cfg(t);
    std::optional<Splits> data;
    if (!s.count_only) data = load_splits(d);
    const InputShape input = data ? shape_of(data->train) : default_input(dataset_kind(d.dataset));
    const std::size_t classes = data ? data->train.num_classes : 10;

    std::ostringstream csv;
    csv.precision(17);
    csv << "nl,width,k,separ,flat,params,test_acc,train_time_s\n";
    // Validate every cell before any training starts.
    std::vector<HyperParams> cells;
    for (const auto& nl : nls)
        for (std::size_t w : widths)
            for (double k : ks)
                for (int separ : separs)
                    for (int flat : flats) {
                        ArchFlags a;
                        a.k = k;
                        a.width = w;
                        a.nl = std::to_string(nl.first) + "," + std::to_string(nl.second);
                        a.separ = separ;
                        a.flat = flat;
                        a.add_layer = add_layer;
                        const auto hp = make_hp(a, input, classes);
                        build_plan(hp);
                        cells.push_back(hp);
                    }

    for (const auto& hp : cells) {
        const auto plan = build_plan(hp);
        const std::size_t params = count_params(plan).total;
        csv << "\"(" << hp.nl1 << "," << hp.nl2 << ")\"," << hp.width << ',' << hp.k << ',' << int(hp.separ) << ','
            << int(hp.flat) << ',' << params << ',';
        if (s.count_only) {
            csv << ",\n";
            continue;
        }
        auto net = Network<float>::init(plan, t.seed);
        std::cerr << "cell nl=(" << hp.nl1 << "," << hp.nl2 << ") width=" << hp.width << " k=" << hp.k
                  << " separ=" << hp.separ << " flat=" << hp.flat << " params=" << params << "\n";
        const auto m = train(net, data->train, data->test, cfg);
        csv << (m.rows.empty() ? 0.0 : m.rows.back().test_acc) << ','
            << (cfg.deterministic ? 0.0 : m.total_train_seconds) << '\n';
    }

    if (s.out.empty())
        std::cout << csv.str();
    else
        write_text(s.out, csv.str());
    return kOk;
}

int run_eval(const std::string& model_path, const DataFlags& d, const std::string& split) {
    if (split != "train" && split != "test") throw UsageError("--split must be train or test");
    const auto loaded = load_model(model_path);
    const auto kind = dataset_kind(d.dataset);
    const auto which = split == "train" ? Split::train : Split::test;
    const auto set = load_split(kind, data_dir(d), which).head(which == Split::train ? d.limit_train : d.limit_test);
    const auto r = evaluate(loaded.network, set);
    std::printf("samples %zu\ncorrect %zu\nloss %.17g\naccuracy %.17g\n", r.total, r.correct, r.loss, r.accuracy);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"NL-CNN training and inference engine"};
    app.require_subcommand(1);

    ArchFlags arch;
    DataFlags data;
    TrainFlags tr;

    auto* describe = app.add_subcommand("describe", "Print the layer table, parameter totals, MACs and receptive fields");
    add_arch_flags(describe, arch);
    std::string describe_dataset = "idx", format = "text";
    describe->add_option("--dataset", describe_dataset, "Input geometry: idx (28x28x1) or cifar10 (32x32x3)")
        ->capture_default_str();
    describe->add_option("--format", format, "text or csv")->capture_default_str();

    auto* train_cmd = app.add_subcommand("train", "Train a model and write weights plus a metrics CSV");
    add_arch_flags(train_cmd, arch);
    add_data_flags(train_cmd, data);
    add_train_flags(train_cmd, tr);
    std::string out = "model.nlcw", metrics_path = "metrics.csv";
    train_cmd->add_option("--out", out, "Weight file to write")->capture_default_str();
    train_cmd->add_option("--metrics", metrics_path, "Per-epoch metrics CSV to write")->capture_default_str();

    auto* sweep = app.add_subcommand("sweep", "Train every cell of a hyper-parameter grid, one CSV row per cell");
    SweepFlags sw;
    bool sweep_add_layer = false;
    sweep->add_option("--nl-list", sw.nl_list, "nl pairs, e.g. (1,1),(2,1)")->capture_default_str();
    sweep->add_option("--width-list", sw.width_list, "Comma-separated widths")->capture_default_str();
    sweep->add_option("--k-list", sw.k_list, "Comma-separated expansion factors")->capture_default_str();
    sweep->add_option("--flat-list", sw.flat_list, "Comma-separated 0/1 head selectors")->capture_default_str();
    sweep->add_option("--separ-list", sw.separ_list, "Comma-separated 0/1 separable flags")->capture_default_str();
    sweep->add_flag("--add-layer", sweep_add_layer, "Append a fourth macro-layer in every cell");
    sweep->add_flag("--count-only", sw.count_only, "Only fill the params column; no data or training");
    sweep->add_option("--out", sw.out, "CSV file to write (default: stdout)");
    add_data_flags(sweep, data);
    add_train_flags(sweep, tr);

    auto* eval = app.add_subcommand("eval", "Evaluate a saved model on a dataset split");
    std::string model_path, split = "test";
    eval->add_option("--model", model_path, "Weight file to load")->required();
    eval->add_option("--split", split, "train or test")->capture_default_str();
    add_data_flags(eval, data);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (describe->parsed()) return run_describe(arch, describe_dataset, format);
        if (train_cmd->parsed()) return run_train(arch, data, tr, out, metrics_path);
        if (sweep->parsed()) return run_sweep(sw, data, tr, sweep_add_layer);
        if (eval->parsed()) return run_eval(model_path, data, split);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kUsage;
}
