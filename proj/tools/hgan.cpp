#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hgan/checkpoint.hpp"
#include "hgan/config.hpp"
#include "hgan/error.hpp"
#include "hgan/evalkit.hpp"
#include "hgan/gradsuite.hpp"
#include "hgan/ingest.hpp"
#include "hgan/train.hpp"

namespace {

using namespace hgan;

std::string timestamp() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void print_report(const RecallReport& r) {
    std::printf("i2t: R@1 %.1f  R@5 %.1f  R@10 %.1f\n", r.i2t_r1, r.i2t_r5, r.i2t_r10);
    std::printf("t2i: R@1 %.1f  R@5 %.1f  R@10 %.1f\n", r.t2i_r1, r.t2i_r5, r.t2i_r10);
    std::printf("Rsum: %.1f\n", r.rsum);
}

void write_report_csv(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, RecallReport>>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "# generated " << timestamp() << "\n";
    out << "split,i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10,rsum\n";
    for (const auto& [name, r] : rows)
        out << name << ',' << fmt(r.i2t_r1) << ',' << fmt(r.i2t_r5) << ',' << fmt(r.i2t_r10)
            << ',' << fmt(r.t2i_r1) << ',' << fmt(r.t2i_r5) << ',' << fmt(r.t2i_r10) << ','
            << fmt(r.rsum) << "\n";
}

nlohmann::json report_json(const RecallReport& r) {
    return {{"i2t", {{"r1", r.i2t_r1}, {"r5", r.i2t_r5}, {"r10", r.i2t_r10}}},
            {"t2i", {{"r1", r.t2i_r1}, {"r5", r.t2i_r5}, {"r10", r.t2i_r10}}},
            {"rsum", r.rsum},
            {"i2t_best_rank", r.i2t_best_rank},
            {"t2i_rank", r.t2i_rank}};
}

int cmd_gen_data(const SyntheticConfig& cfg, const std::string& out) {
    DatasetManifest m = generate_synthetic(cfg, out);
    std::printf("wrote %zu groups / %zu captions to %s\n",
                m.samples.size() / m.group_size, m.samples.size(), out.c_str());
    return 0;
}

int cmd_train(RunConfig cfg) {
    cfg.validate();
    Dataset train_ds = load_dataset(cfg.train_manifest);
    Dataset val_ds;
    const Dataset* val = nullptr;
    if (!cfg.val_manifest.empty()) {
        val_ds = load_dataset(cfg.val_manifest);
        val = &val_ds;
    }
    TrainOptions opts;
    opts.out_dir = cfg.out_dir;
    opts.on_epoch = [](const EpochLog& e) {
        if (e.rsum >= 0)
            std::printf("epoch %zu  loss %.6f  rsum %.1f\n", e.epoch, e.mean_loss, e.rsum);
        else
            std::printf("epoch %zu  loss %.6f\n", e.epoch, e.mean_loss);
    };
    TrainResult r = train(train_ds, val, cfg.model, cfg.train, opts);
    std::printf("done: %zu steps, final rsum %.1f, checkpoint %s\n", r.steps_run,
                r.final_rsum, r.last_checkpoint.string().c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& manifest,
             const std::string& out_dir, const std::string& ablate, bool folds) {
    Checkpoint ck = load_checkpoint(checkpoint);
    Dataset ds = load_dataset(manifest);
    LevelFlags flags{ck.params.config.enable_s1, ck.params.config.enable_s2};
    if (ablate.find("s1") != std::string::npos) flags.s1 = false;
    if (ablate.find("s2") != std::string::npos) flags.s2 = false;
    if (ablate.find("s3") != std::string::npos)
        throw ConfigError("S3 cannot be disabled");

    std::filesystem::create_directories(out_dir);
    nlohmann::json j;
    std::vector<std::pair<std::string, RecallReport>> rows;
    if (folds) {
        FoldedReport fr = evaluate_folds(ds, ck.params, flags);
        for (std::size_t i = 0; i < fr.per_fold.size(); ++i)
            rows.emplace_back("fold" + std::to_string(i), fr.per_fold[i]);
        rows.emplace_back("mean", fr.averaged);
        std::printf("averaged over %zu folds:\n", fr.per_fold.size());
        print_report(fr.averaged);
        j["folds"] = nlohmann::json::array();
        for (const auto& f : fr.per_fold) j["folds"].push_back(report_json(f));
        j["mean"] = report_json(fr.averaged);
    } else {
        RecallReport r = evaluate(ds, ck.params, flags);
        rows.emplace_back(ds.manifest.split, r);
        print_report(r);
        j = report_json(r);
    }
    write_report_csv(std::filesystem::path(out_dir) / "report.csv", rows);
    std::ofstream jo(std::filesystem::path(out_dir) / "report.json", std::ios::trunc);
    jo << j.dump(2) << '\n';
    return 0;
}

int cmd_grad_check(double tol, double h, std::uint64_t seed) {
    GradSuiteResult res = run_gradient_suite(h, tol, seed);
    for (const SuiteCase& c : res.cases)
        std::printf("%-45s %s\n", c.name.c_str(), c.report.summary().c_str());
    std::printf("gradient suite: %s (max rel err %.3g, tol %.3g)\n",
                res.all_pass ? "pass" : "FAIL", res.max_rel_err, tol);
    if (!res.all_pass) throw CheckError("gradient suite failed");
    return 0;
}

int cmd_embed(const std::string& checkpoint, const std::string& manifest,
              const std::string& out_dir) {
    Checkpoint ck = load_checkpoint(checkpoint);
    Dataset ds = load_dataset(manifest);
    EvalEmbeddings emb = embed_dataset(ds, ck.params);
    std::filesystem::create_directories(out_dir);
    nlohmann::json index;
    index["images"] = nlohmann::json::array();
    index["texts"] = nlohmann::json::array();
    for (std::size_t g = 0; g < emb.image_ids.size(); ++g) {
        const std::string file = emb.image_ids[g] + "_V.bin";
        write_blob(std::filesystem::path(out_dir) / file, emb.img_v[g]);
        index["images"].push_back({{"id", emb.image_ids[g]}, {"file", file}});
    }
    for (std::size_t t = 0; t < emb.text_ids.size(); ++t) {
        const std::string file = emb.text_ids[t] + "_T.bin";
        write_blob(std::filesystem::path(out_dir) / file, emb.txt_t[t]);
        index["texts"].push_back({{"id", emb.text_ids[t]},
                                  {"file", file},
                                  {"caption_group_id", emb.image_ids[emb.text_to_image[t]]}});
    }
    std::ofstream io(std::filesystem::path(out_dir) / "index.json", std::ios::trunc);
    io << index.dump(2) << '\n';
    std::printf("wrote %zu image and %zu text embeddings to %s\n", emb.image_ids.size(),
                emb.text_ids.size(), out_dir.c_str());
    return 0;
}

int cmd_word_sim(const std::string& checkpoint, const std::string& manifest,
                 const std::string& out_path, const std::string& sample) {
    Checkpoint ck = load_checkpoint(checkpoint);
    Dataset ds = load_dataset(manifest);
    std::vector<WordSimilarityRow> rows = word_similarity_export(ds, ck.params);
    std::ofstream out(out_path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + out_path);
    out << "# generated " << timestamp() << "\n";
    out << "sample_id,caption_group_id,token_index,weight\n";
    bool any = false;
    for (const WordSimilarityRow& r : rows) {
        if (!sample.empty() && r.sample_id != sample) continue;
        any = true;
        for (std::size_t i = 0; i < r.weights.size(); ++i)
            out << r.sample_id << ',' << r.caption_group_id << ',' << i << ','
                << fmt(r.weights[i]) << "\n";
    }
    if (!sample.empty() && !any) throw DataError("sample " + sample + " not in manifest");
    std::printf("wrote word similarities to %s\n", out_path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical graph alignment retrieval toolkit"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "write a synthetic feature dataset");
    SyntheticConfig sc;
    std::string gen_out;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--groups", sc.n_groups, "number of image/caption groups");
    gen->add_option("--m", sc.m, "image grid rows");
    gen->add_option("--k", sc.k, "region rows");
    gen->add_option("--l", sc.l, "token rows");
    gen->add_option("--d0", sc.d0, "image feature dim");
    gen->add_option("--d1", sc.d1, "token feature dim");
    gen->add_option("--latent", sc.latent_dim, "latent concept dim");
    gen->add_option("--group-size", sc.group_size, "captions per image");
    gen->add_option("--noise", sc.noise, "noise scale");
    gen->add_option("--seed", sc.seed, "rng seed");
    gen->add_option("--name", sc.name, "dataset name");
    gen->add_option("--split", sc.split, "split label");

    // train
    auto* tr = app.add_subcommand("train", "train from a JSON run config");
    std::string cfg_path;
    tr->add_option("--config", cfg_path, "run config JSON")->required();
    std::string o_train_manifest, o_val_manifest, o_out;
    std::int64_t o_epochs = -1, o_batch = -1, o_seed = -1;
    double o_lr = -1, o_margin = -1;
    tr->add_option("--train-manifest", o_train_manifest, "override data.train_manifest");
    tr->add_option("--val-manifest", o_val_manifest, "override data.val_manifest");
    tr->add_option("--out", o_out, "override out_dir");
    tr->add_option("--epochs", o_epochs, "override train.epochs");
    tr->add_option("--batch-size", o_batch, "override train.batch_size");
    tr->add_option("--lr", o_lr, "override train.base_lr");
    tr->add_option("--margin", o_margin, "override train.margin");
    tr->add_option("--seed", o_seed, "override train.seed");

    // eval
    auto* ev = app.add_subcommand("eval", "recall report from a checkpoint");
    std::string ev_ck, ev_manifest, ev_out = ".", ev_ablate;
    bool ev_folds = false;
    ev->add_option("--checkpoint", ev_ck, "checkpoint file")->required();
    ev->add_option("--manifest", ev_manifest, "dataset manifest")->required();
    ev->add_option("--out", ev_out, "report output directory");
    ev->add_option("--ablate", ev_ablate, "comma list of levels to disable (s1,s2)");
    ev->add_flag("--folds", ev_folds, "average over manifest-declared folds");

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "finite-difference gradient suite");
    double gc_tol = 1e-4, gc_h = 1e-5;
    std::uint64_t gc_seed = 20240501;
    gc->add_option("--tol", gc_tol, "max relative error");
    gc->add_option("--step", gc_h, "central difference step");
    gc->add_option("--seed", gc_seed, "rng seed");

    // embed
    auto* em = app.add_subcommand("embed", "dump pooled V/T vectors as blobs");
    std::string em_ck, em_manifest, em_out;
    em->add_option("--checkpoint", em_ck, "checkpoint file")->required();
    em->add_option("--manifest", em_manifest, "dataset manifest")->required();
    em->add_option("--out", em_out, "output directory")->required();

    // word-sim
    auto* ws = app.add_subcommand("word-sim", "per-token image match weights as CSV");
    std::string ws_ck, ws_manifest, ws_out, ws_sample;
    ws->add_option("--checkpoint", ws_ck, "checkpoint file")->required();
    ws->add_option("--manifest", ws_manifest, "dataset manifest")->required();
    ws->add_option("--out", ws_out, "output CSV path")->required();
    ws->add_option("--sample", ws_sample, "restrict to one sample id");

    try {
        app.parse(argc, argv);

        if (gen->parsed()) return cmd_gen_data(sc, gen_out);
        if (tr->parsed()) {
            RunConfig cfg = load_run_config(cfg_path);
            if (!o_train_manifest.empty()) cfg.train_manifest = o_train_manifest;
            if (!o_val_manifest.empty()) cfg.val_manifest = o_val_manifest;
            if (!o_out.empty()) cfg.out_dir = o_out;
            if (o_epochs >= 0) cfg.train.epochs = static_cast<std::size_t>(o_epochs);
            if (o_batch >= 0) cfg.train.batch_size = static_cast<std::size_t>(o_batch);
            if (o_lr >= 0) cfg.train.base_lr = o_lr;
            if (o_margin >= 0) cfg.train.margin = o_margin;
            if (o_seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(o_seed);
            return cmd_train(std::move(cfg));
        }
        if (ev->parsed()) return cmd_eval(ev_ck, ev_manifest, ev_out, ev_ablate, ev_folds);
        if (gc->parsed()) return cmd_grad_check(gc_tol, gc_h, gc_seed);
        if (em->parsed()) return cmd_embed(em_ck, em_manifest, em_out);
        if (ws->parsed()) return cmd_word_sim(ws_ck, ws_manifest, ws_out, ws_sample);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const CheckError& e) {
        std::fprintf(stderr, "check failed: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
