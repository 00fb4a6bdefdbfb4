#include "deepcoder/cli.hpp"

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "deepcoder/dataio.hpp"
#include "deepcoder/errors.hpp"
#include "deepcoder/metrics.hpp"
#include "deepcoder/trainer.hpp"

namespace deepcoder::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

dataio::Config load_config(const std::string& path) {
    return path.empty() ? dataio::Config{} : dataio::parse_config(path);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out << text;
    if (!out) throw FormatError("write failed: " + path.string());
}

void write_log(const fs::path& path, const trainer::TrainState& s) {
    std::string text = dataio::metrics_csv_header() + "\n";
    for (const auto& r : s.history) text += dataio::metrics_csv_row(r) + "\n";
    write_text(path, text);
}

void check_input_shape(const trainer::TrainState& s, const Dataset& d) {
    const auto& a = s.config.arch;
    if (d.images.dim(1) != a.channels || d.images.dim(2) != a.height || d.images.dim(3) != a.width)
        throw FormatError("dataset images " + shape_str(d.images.shape()) + " do not match the model input");
    if (d.levels != s.levels) throw FormatError("dataset level counts do not match the model");
}

std::string levels_line(const LabelMatrix& y, std::size_t row) {
    std::string s;
    for (std::size_t q = 0; q < y.cols; ++q) s += (q ? " " : "") + std::to_string(y.at(row, q));
    return s;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Semi-parametric ordinal autoencoder toolkit", "deepcoder"};
    app.require_subcommand(1, 1);

    std::string config_path, out_path, data_path, log_path, model_path, report_path, resume_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> max_epochs;
    std::size_t index = 0;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic ordinal image dataset");
    synth->add_option("--config", config_path, "Config document (data section)");
    synth->add_option("--out", out_path, "Manifest path to write, e.g. data/train.json")->required();
    synth->add_option("--seed", seed, "Override data.seed");

    auto* train = app.add_subcommand("train", "Run joint training");
    train->add_option("--data", data_path, "Dataset manifest")->required();
    train->add_option("--config", config_path, "Config document");
    train->add_option("--out", out_path, "Checkpoint to write")->required();
    train->add_option("--log", log_path, "Per-epoch metrics CSV");
    train->add_option("--seed", seed, "Override train.seed");
    train->add_option("--max-epochs", max_epochs, "Override train.max_epochs");
    train->add_option("--resume", resume_path, "Continue from this checkpoint");

    auto* eval = app.add_subcommand("eval", "Evaluate a trained model on a dataset");
    eval->add_option("--model", model_path, "Checkpoint")->required();
    eval->add_option("--data", data_path, "Dataset manifest")->required();
    eval->add_option("--report", report_path, "Report document to write (JSON)");

    auto* infer = app.add_subcommand("infer", "Predict levels and reconstruct one sample");
    infer->add_option("--model", model_path, "Checkpoint")->required();
    infer->add_option("--data", data_path, "Dataset manifest")->required();
    infer->add_option("--index", index, "Sample index")->required();
    infer->add_option("--out", out_path, "Reconstruction file (raw float32, [C, H, W])");

    auto* exp = app.add_subcommand("export-latents", "Write Z_1 and Z_0 coordinates as CSV");
    exp->add_option("--model", model_path, "Checkpoint")->required();
    exp->add_option("--data", data_path, "Dataset manifest")->required();
    exp->add_option("--out", out_path, "CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }

    try {
        if (*synth) {
            dataio::Config c = load_config(config_path);
            if (seed) c.synth.seed = *seed;
            const Dataset d = dataio::generate_synthetic(c.synth);
            dataio::save_dataset(d, out_path);
            out << "N_D=" << d.size() << " Q=" << d.outputs() << " L=" << d.levels.front() << "\n";
        } else if (*train) {
            const Dataset d = dataio::load_dataset(data_path);
            trainer::TrainState s;
            if (!resume_path.empty()) {
                if (!config_path.empty()) throw UsageError("--resume uses the checkpoint's config; drop --config");
                s = dataio::load_checkpoint(resume_path);
                check_input_shape(s, d);
            } else {
                dataio::Config c = load_config(config_path);
                if (seed) c.train.seed = *seed;
                if (max_epochs) c.train.max_epochs = *max_epochs;
                s = trainer::init_training(d, c.train);
            }
            if (max_epochs) s.config.max_epochs = *max_epochs;
            trainer::run_training(s, d, [&](const trainer::TrainState& st) {
                if (!log_path.empty()) write_log(log_path, st);
            });
            if (!log_path.empty()) write_log(log_path, s);
            dataio::save_checkpoint(s, out_path);
            const auto& last = s.history.back();
            out << "epochs=" << s.history.size() << " joint=" << s.joint_epochs
                << " converged=" << (s.converged ? "yes" : "no") << " L_DC=" << last.l_dc << "\n";
        } else if (*eval) {
            const auto s = dataio::load_checkpoint(model_path);
            const Dataset d = dataio::load_dataset(data_path);
            check_input_shape(s, d);
            const auto inf = trainer::infer(s, d.images);
            auto report = metrics::evaluate(inf.levels, d.labels);
            report.nlpd = metrics::nlpd(inf.z0, inf.z0_rec, inf.z0_rec_var);
            const std::string doc = report.to_json();
            if (!report_path.empty()) write_text(report_path, doc);
            out << doc;
        } else if (*infer) {
            const auto s = dataio::load_checkpoint(model_path);
            const Dataset d = dataio::load_dataset(data_path);
            check_input_shape(s, d);
            if (index >= d.size())
                throw FormatError("--index " + std::to_string(index) + " out of range for " + std::to_string(d.size()) +
                                  " samples");
            const auto inf = trainer::infer(s, select_rows(d.images, {index}));
            out << levels_line(inf.levels, 0) << "\n";
            if (!out_path.empty()) {
                std::vector<float> px(inf.reconstruction.raw().begin(), inf.reconstruction.raw().end());
                std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
                f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size() * sizeof(float)));
                if (!f) throw FormatError("cannot write " + out_path);
            }
        } else if (*exp) {
            const auto s = dataio::load_checkpoint(model_path);
            const Dataset d = dataio::load_dataset(data_path);
            check_input_shape(s, d);
            const auto inf = trainer::infer(s, d.images);
            const std::size_t d1 = inf.z1.dim(1), d0 = inf.z0.dim(1);
            std::string text = "index,subject";
            for (std::size_t j = 0; j < d1; ++j) text += ",z1_" + std::to_string(j + 1);
            for (std::size_t j = 0; j < d0; ++j) text += ",z0_" + std::to_string(j + 1);
            text += "\n";
            char buf[64];
            for (std::size_t i = 0; i < d.size(); ++i) {
                text += std::to_string(i) + "," + std::to_string(d.subjects[i]);
                for (std::size_t j = 0; j < d1; ++j) {
                    std::snprintf(buf, sizeof buf, ",%.17g", inf.z1.at(i, j));
                    text += buf;
                }
                for (std::size_t j = 0; j < d0; ++j) {
                    std::snprintf(buf, sizeof buf, ",%.17g", inf.z0.at(i, j));
                    text += buf;
                }
                text += "\n";
            }
            write_text(out_path, text);
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericalError& e) {
        err << "numerical error: " << e.what() << "\n";
        return kNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kData;
    }
    return kOk;
}

}  // namespace deepcoder::cli
