// Command-line front end: corpus synthesis, feature extraction, training,
// ablation, and embedding export. Every run writes a run_manifest.json whose
// resolved-config snapshot can be fed back through --config to replay the
// run bit-for-bit.
//
// Exit codes: 0 success, 1 runtime failure (io, data, numerics), 2 usage or
// configuration error.

#include <omp.h>

#include <algorithm>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "msse/common.hpp"
#include "msse/data.hpp"
#include "msse/dsp.hpp"
#include "msse/kernels.hpp"
#include "msse/model.hpp"
#include "msse/run_manifest.hpp"
#include "msse/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string strfmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

void log_line(const std::string& msg) { std::cerr << "[msse] " << msg << std::endl; }

const std::vector<std::string> kTopKeys = {"seed", "threads", "args", "dsp", "model", "train"};
const std::vector<std::string> kArgKeys = {"classes", "clips",    "duration_s", "sample_rate",
                                           "manifest", "mode",    "features",   "checkpoint"};

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& what) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw msse::ConfigError("unknown " + what + " key '" + key + "'");
        }
    }
}

json load_config_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw msse::IoError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw msse::FormatError(path + ": unparseable JSON: " + e.what());
    }
    if (!j.is_object()) throw msse::ConfigError(path + ": config must be a JSON object");
    // A previous run's manifest is accepted directly; its frozen config
    // snapshot drives the replay.
    if (msse::cli::is_run_manifest(j)) {
        return msse::cli::RunManifest::from_json(j).resolved_config;
    }
    return j;
}

// Everything a handler needs besides its own flags. Precedence for any
// value: explicit command-line flag, then config file, then default.
struct GlobalOpts {
    std::uint64_t seed = 0;
    int threads = 0;
    std::string config_path;
    std::string out_dir;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* threads_opt = nullptr;
    json file = json::object();  // config file body (or a replayed snapshot)
    json args = json::object();  // file["args"]
};

template <typename T>
T resolve_value(const CLI::Option* opt, T cli_val, const json& sect, const char* key, T def) {
    if (opt != nullptr && opt->count() > 0) return cli_val;
    if (sect.contains(key)) return sect.at(key).get<T>();
    return def;
}

std::string resolve_path(const CLI::Option* opt, const std::string& cli_val, const json& sect,
                         const char* key) {
    if (opt != nullptr && opt->count() > 0) return cli_val;
    if (sect.contains(key)) return sect.at(key).get<std::string>();
    return {};
}

void finalize_globals(GlobalOpts& g) {
    if (!g.config_path.empty()) g.file = load_config_json(g.config_path);
    check_keys(g.file, kTopKeys, "config");
    g.args = g.file.value("args", json::object());
    if (!g.args.is_object()) throw msse::ConfigError("config key 'args' must be an object");
    check_keys(g.args, kArgKeys, "config args");
    g.seed = resolve_value<std::uint64_t>(g.seed_opt, g.seed, g.file, "seed", 0);
    g.threads = resolve_value<int>(g.threads_opt, g.threads, g.file, "threads", 0);
    if (g.threads < 0) throw msse::ConfigError("--threads must be >= 0");
    if (g.threads == 1) {
        msse::kernels::set_parallel(false);
    } else if (g.threads > 1) {
        msse::kernels::set_parallel(true);
        omp_set_num_threads(g.threads);
    }
    // threads == 0 keeps the library default (parallel, OpenMP-chosen team).
}

json config_section(const json& file, const char* key) {
    json s = file.value(key, json::object());
    if (!s.is_object()) throw msse::ConfigError(std::string("config key '") + key +
                                                "' must be an object");
    return s;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw msse::IoError("cannot open '" + path + "' for writing");
    out << text;
    out.flush();
    if (!out) throw msse::IoError("failed while writing '" + path + "'");
}

void write_run_manifest(const GlobalOpts& g, const std::string& command, std::uint64_t seed,
                        const json& resolved, const std::string& started,
                        std::vector<std::string> outputs) {
    msse::cli::RunManifest rm;
    rm.command = command;
    rm.resolved_config = resolved;
    rm.seed = seed;
    rm.build_fingerprint = msse::cli::build_fingerprint();
    rm.started_at = started;
    rm.finished_at = msse::cli::iso8601_now();
    rm.outputs = std::move(outputs);
    rm.write(g.out_dir + "/run_manifest.json");
}

// ----- shared pieces of the training-family commands ------------------------

msse::training::TrainConfig resolve_train_config(const GlobalOpts& g) {
    auto tcfg = msse::training::TrainConfig::from_json(config_section(g.file, "train"));
    // A --seed flag (or a top-level "seed") outranks the train section.
    if ((g.seed_opt != nullptr && g.seed_opt->count() > 0) || g.file.contains("seed")) {
        tcfg.seed = g.seed;
    }
    return tcfg;
}

msse::training::FeatureSet load_features(const msse::data::CorpusManifest& man,
                                         const msse::dsp::DspConfig& dcfg,
                                         const std::string& features_dir) {
    if (features_dir.empty()) {
        log_line(strfmt("extracting features for %zu utterances", man.entries.size()));
        return msse::data::extract_feature_set(man, dcfg);
    }
    log_line("loading cached features from " + features_dir);
    auto cache = msse::data::open_cache(features_dir, dcfg);
    auto set = msse::data::load_feature_set(cache);
    if (set.n_classes != man.n_classes()) {
        throw msse::DataError(strfmt("feature cache at %s holds %d classes but the manifest "
                                     "defines %d",
                                     features_dir.c_str(), set.n_classes, man.n_classes()));
    }
    return set;
}

msse::model::ModelConfig resolve_model_config(const json& msect, int n_classes, int n_coeffs) {
    auto mcfg = msse::model::ModelConfig::from_json(msect);
    if (msect.contains("n_classes")) {
        if (mcfg.n_classes != n_classes) {
            throw msse::DataError(strfmt("model config sets n_classes=%d but the corpus has %d "
                                         "classes",
                                         mcfg.n_classes, n_classes));
        }
    } else {
        mcfg.n_classes = n_classes;
    }
    if (msect.contains("n_mfcc")) {
        if (mcfg.n_mfcc != n_coeffs) {
            throw msse::ConfigError(strfmt("model config sets n_mfcc=%d but the dsp config "
                                           "produces %d coefficients",
                                           mcfg.n_mfcc, n_coeffs));
        }
    } else {
        mcfg.n_mfcc = n_coeffs;
    }
    mcfg.validate();
    return mcfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"speech-emotion toolkit: synthetic corpora, MFCC features, gated temporal "
                 "models, ablations"};
    app.require_subcommand(1);

    GlobalOpts g;
    g.seed_opt = app.add_option("--seed", g.seed, "Base RNG seed (default 0)");
    g.threads_opt =
        app.add_option("--threads", g.threads,
                       "Worker threads: 0 = library default, 1 = serial kernels, n = OpenMP team "
                       "of n. Results are identical for every setting.");
    app.add_option("--config", g.config_path,
                   "JSON config ({seed, threads, args, dsp, model, train}) or a run_manifest.json "
                   "from a previous run to replay it");
    app.add_option("--out", g.out_dir, "Output directory (created if missing)")->required();

    auto* s_synth = app.add_subcommand("synth", "Generate the synthetic labeled corpus");
    s_synth->fallthrough();
    int a_classes = 6, a_clips = 10, a_rate = 16000;
    double a_duration = 1.0;
    auto* o_classes = s_synth->add_option("--classes", a_classes, "Number of classes");
    auto* o_clips = s_synth->add_option("--clips", a_clips, "Clips per class");
    auto* o_duration = s_synth->add_option("--duration", a_duration, "Clip length in seconds");
    auto* o_rate = s_synth->add_option("--rate", a_rate, "Sample rate in Hz");

    auto* s_extract =
        app.add_subcommand("extract", "Extract MFCC features into an on-disk cache");
    s_extract->fallthrough();
    std::string x_manifest;
    auto* o_xman = s_extract->add_option("--manifest", x_manifest, "Corpus manifest CSV");

    auto* s_train = app.add_subcommand("train", "Train and evaluate on a corpus");
    s_train->fallthrough();
    std::string t_manifest, t_mode, t_features;
    auto* o_tman = s_train->add_option("--manifest", t_manifest, "Corpus manifest CSV");
    auto* o_tmode = s_train->add_option("--mode", t_mode, "Evaluation protocol: cv or holdout");
    auto* o_tfeat = s_train->add_option("--features", t_features,
                                        "Existing feature-cache directory (skips extraction)");

    auto* s_ablate =
        app.add_subcommand("ablate", "Run the five-variant ablation suite under one protocol");
    s_ablate->fallthrough();
    std::string b_manifest, b_features;
    auto* o_bman = s_ablate->add_option("--manifest", b_manifest, "Corpus manifest CSV");
    auto* o_bfeat = s_ablate->add_option("--features", b_features,
                                         "Existing feature-cache directory (skips extraction)");

    auto* s_export = app.add_subcommand("export-embeddings",
                                        "Write fused utterance embeddings from a trained model");
    s_export->fallthrough();
    std::string e_ckpt, e_manifest, e_features;
    auto* o_eckpt = s_export->add_option("--checkpoint", e_ckpt, "Trained checkpoint file");
    auto* o_eman = s_export->add_option("--manifest", e_manifest, "Corpus manifest CSV");
    auto* o_efeat = s_export->add_option("--features", e_features,
                                         "Existing feature-cache directory (skips extraction)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        finalize_globals(g);
        const std::string started = msse::cli::iso8601_now();
        fs::create_directories(g.out_dir);

        if (s_synth->parsed()) {
            msse::data::SyntheticSpec spec;
            spec.n_classes = resolve_value<int>(o_classes, a_classes, g.args, "classes", 6);
            spec.clips_per_class = resolve_value<int>(o_clips, a_clips, g.args, "clips", 10);
            spec.duration_s =
                resolve_value<double>(o_duration, a_duration, g.args, "duration_s", 1.0);
            spec.sample_rate = resolve_value<int>(o_rate, a_rate, g.args, "sample_rate", 16000);
            spec.seed = g.seed;

            const std::string manifest_path =
                msse::data::generate_synthetic_corpus(spec, g.out_dir);

            std::vector<std::string> outputs{"manifest.csv"};
            for (int k = 0; k < spec.n_classes; ++k) {
                for (int i = 0; i < spec.clips_per_class; ++i) {
                    outputs.push_back(strfmt("class_%02d/%03d.wav", k, i));
                }
            }
            json resolved{{"seed", spec.seed},
                          {"threads", g.threads},
                          {"args",
                           {{"classes", spec.n_classes},
                            {"clips", spec.clips_per_class},
                            {"duration_s", spec.duration_s},
                            {"sample_rate", spec.sample_rate}}}};
            write_run_manifest(g, "synth", spec.seed, resolved, started, std::move(outputs));
            log_line(strfmt("wrote %d clips across %d classes under %s",
                            spec.n_classes * spec.clips_per_class, spec.n_classes,
                            g.out_dir.c_str()));
            std::cout << manifest_path << std::endl;
            return 0;
        }

        if (s_extract->parsed()) {
            const std::string manifest_path = resolve_path(o_xman, x_manifest, g.args, "manifest");
            if (manifest_path.empty()) {
                throw msse::ConfigError("extract requires --manifest (or config args.manifest)");
            }
            const auto dcfg = msse::data::dsp_config_from_json(config_section(g.file, "dsp"));
            const auto man = msse::data::load_manifest(manifest_path);
            const auto cache = msse::data::cache_features(man, dcfg, g.out_dir);

            std::vector<std::string> outputs{"index.json"};
            for (const auto& e : cache.entries) outputs.push_back(e.record_file);
            json resolved{{"seed", g.seed},
                          {"threads", g.threads},
                          {"args", {{"manifest", manifest_path}}},
                          {"dsp", msse::data::dsp_config_to_json(dcfg)}};
            write_run_manifest(g, "extract", g.seed, resolved, started, std::move(outputs));
            log_line(strfmt("cached %zu utterances (dsp fingerprint %s)", cache.entries.size(),
                            dcfg.fingerprint().c_str()));
            std::cout << g.out_dir + "/index.json" << std::endl;
            return 0;
        }

        if (s_train->parsed()) {
            const std::string manifest_path = resolve_path(o_tman, t_manifest, g.args, "manifest");
            if (manifest_path.empty()) {
                throw msse::ConfigError("train requires --manifest (or config args.manifest)");
            }
            std::string mode = resolve_path(o_tmode, t_mode, g.args, "mode");
            if (mode.empty()) mode = "cv";
            if (mode != "cv" && mode != "holdout") {
                throw msse::ConfigError("--mode must be 'cv' or 'holdout', got '" + mode + "'");
            }
            const std::string features_dir = resolve_path(o_tfeat, t_features, g.args, "features");

            const auto dcfg = msse::data::dsp_config_from_json(config_section(g.file, "dsp"));
            const auto man = msse::data::load_manifest(manifest_path);
            const auto data = load_features(man, dcfg, features_dir);
            const auto mcfg =
                resolve_model_config(config_section(g.file, "model"), data.n_classes,
                                     dcfg.n_coeffs);
            const auto tcfg = resolve_train_config(g);

            std::vector<std::string> outputs{"report.json"};
            msse::training::EvalReport report;
            if (mode == "cv") {
                report = msse::training::run_cv(
                    data, mcfg, tcfg, [&](int fold, msse::model::Model& trained) {
                        const std::string name = strfmt("fold_%02d.ckpt", fold);
                        msse::model::save_checkpoint(g.out_dir + "/" + name, trained);
                        outputs.push_back(name);
                    });
            } else {
                msse::model::Model trained;
                report = msse::training::run_holdout(data, mcfg, tcfg, &trained);
                msse::model::save_checkpoint(g.out_dir + "/model.ckpt", trained);
                outputs.push_back("model.ckpt");
            }
            write_text_file(g.out_dir + "/report.json", report.to_json().dump(2) + "\n");

            json args{{"manifest", manifest_path}, {"mode", mode}};
            if (!features_dir.empty()) args["features"] = features_dir;
            json resolved{{"seed", tcfg.seed},
                          {"threads", g.threads},
                          {"args", std::move(args)},
                          {"dsp", msse::data::dsp_config_to_json(dcfg)},
                          {"model", mcfg.to_json()},
                          {"train", tcfg.to_json()}};
            write_run_manifest(g, "train", tcfg.seed, resolved, started, std::move(outputs));

            for (const auto& fr : report.per_fold) {
                log_line(strfmt("fold %d: uar=%.4f war=%.4f", fr.fold, fr.uar, fr.war));
            }
            log_line(strfmt("%s result: uar=%.6f war=%.6f", mode.c_str(), report.uar,
                            report.war));
            std::cout << g.out_dir + "/report.json" << std::endl;
            return 0;
        }

        if (s_ablate->parsed()) {
            const std::string manifest_path = resolve_path(o_bman, b_manifest, g.args, "manifest");
            if (manifest_path.empty()) {
                throw msse::ConfigError("ablate requires --manifest (or config args.manifest)");
            }
            const std::string features_dir = resolve_path(o_bfeat, b_features, g.args, "features");

            const auto dcfg = msse::data::dsp_config_from_json(config_section(g.file, "dsp"));
            const auto man = msse::data::load_manifest(manifest_path);
            const auto data = load_features(man, dcfg, features_dir);
            const auto mcfg =
                resolve_model_config(config_section(g.file, "model"), data.n_classes,
                                     dcfg.n_coeffs);
            const auto tcfg = resolve_train_config(g);

            const auto rows = msse::training::run_ablation_suite(data, mcfg, tcfg);
            msse::training::write_ablation_csv(g.out_dir + "/ablation.csv", rows);
            json by_variant = json::object();
            for (const auto& row : rows) {
                by_variant[msse::model::variant_short_name(row.variant)] = row.report.to_json();
                log_line(strfmt("%-6s uar=%.4f war=%.4f",
                                msse::model::variant_short_name(row.variant).c_str(),
                                row.report.uar, row.report.war));
            }
            write_text_file(g.out_dir + "/ablation_report.json", by_variant.dump(2) + "\n");

            json args{{"manifest", manifest_path}};
            if (!features_dir.empty()) args["features"] = features_dir;
            json resolved{{"seed", tcfg.seed},
                          {"threads", g.threads},
                          {"args", std::move(args)},
                          {"dsp", msse::data::dsp_config_to_json(dcfg)},
                          {"model", mcfg.to_json()},
                          {"train", tcfg.to_json()}};
            write_run_manifest(g, "ablate", tcfg.seed, resolved, started,
                               {"ablation.csv", "ablation_report.json"});
            std::cout << g.out_dir + "/ablation.csv" << std::endl;
            return 0;
        }

        if (s_export->parsed()) {
            const std::string ckpt_path = resolve_path(o_eckpt, e_ckpt, g.args, "checkpoint");
            if (ckpt_path.empty()) {
                throw msse::ConfigError(
                    "export-embeddings requires --checkpoint (or config args.checkpoint)");
            }
            const std::string manifest_path = resolve_path(o_eman, e_manifest, g.args, "manifest");
            if (manifest_path.empty()) {
                throw msse::ConfigError(
                    "export-embeddings requires --manifest (or config args.manifest)");
            }
            const std::string features_dir = resolve_path(o_efeat, e_features, g.args, "features");

            auto m = msse::model::load_checkpoint(ckpt_path);
            const auto dcfg = msse::data::dsp_config_from_json(config_section(g.file, "dsp"));
            if (m.cfg.n_mfcc != dcfg.n_coeffs) {
                throw msse::DataError(strfmt("checkpoint/config mismatch in field 'n_mfcc': the "
                                             "checkpoint expects %d coefficients but the dsp "
                                             "config produces %d",
                                             m.cfg.n_mfcc, dcfg.n_coeffs));
            }
            const auto man = msse::data::load_manifest(manifest_path);
            const auto data = load_features(man, dcfg, features_dir);
            if (m.cfg.n_classes != data.n_classes) {
                throw msse::DataError(strfmt("checkpoint/config mismatch in field 'n_classes': "
                                             "the checkpoint was trained on %d classes but the "
                                             "corpus has %d",
                                             m.cfg.n_classes, data.n_classes));
            }
            const auto tcfg = resolve_train_config(g);
            const auto records = msse::training::export_embeddings(m, data, tcfg.pad_frames);
            msse::training::write_embeddings_csv(g.out_dir + "/embeddings.csv", records);

            json args{{"checkpoint", ckpt_path}, {"manifest", manifest_path}};
            if (!features_dir.empty()) args["features"] = features_dir;
            json resolved{{"seed", g.seed},
                          {"threads", g.threads},
                          {"args", std::move(args)},
                          {"dsp", msse::data::dsp_config_to_json(dcfg)},
                          {"train", tcfg.to_json()}};
            write_run_manifest(g, "export-embeddings", g.seed, resolved, started,
                               {"embeddings.csv"});
            log_line(strfmt("wrote %zu embeddings", records.size()));
            std::cout << g.out_dir + "/embeddings.csv" << std::endl;
            return 0;
        }

        throw msse::ConfigError("no subcommand given");
    } catch (const msse::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::cerr << "run '" << (argc > 0 ? argv[0] : "msse") << " --help' for usage\n";
        return 2;
    } catch (const msse::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
