#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "dicl/chart.hpp"
#include "dicl/eval.hpp"
#include "dicl/png_io.hpp"
#include "dicl/synth.hpp"
#include "dicl/trainer.hpp"

namespace fs = std::filesystem;
using namespace dicl;

namespace {

nlohmann::json checkpoint_metadata(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("cannot read checkpoint: " + path);
    std::string magic, meta;
    std::getline(in, magic);
    if (magic != "DICL1") throw UsageError("bad checkpoint magic in " + path);
    std::getline(in, meta);
    return nlohmann::json::parse(meta);
}

SiameseModel<double> load_model(const std::string& ckpt_path, TrainConfig* out_cfg = nullptr) {
    const nlohmann::json meta = checkpoint_metadata(ckpt_path);
    const TrainConfig tc = TrainConfig::from_json(meta.at("config"));
    if (out_cfg) *out_cfg = tc;
    ModelConfig mc;
    mc.channels = tc.channels;
    mc.emb_dim = tc.emb_dim;
    mc.instance_h = tc.instance_h;
    mc.instance_w = tc.instance_w;
    mc.init_seed = tc.seed;
    SiameseModel<double> model(mc);
    const nlohmann::json loaded = model.load(ckpt_path);
    if (loaded.at("config_hash") != meta.at("config_hash"))
        throw ConfigError("checkpoint metadata changed mid-read: " + ckpt_path);
    return model;
}

void write_eval_json(const EvalResult& r, std::ostream& os) {
    nlohmann::json j;
    j["gallery_size"] = r.gallery_size;
    j["mAP"] = r.mAP;
    j["top1"] = r.top1;
    j["queries"] = nlohmann::json::array();
    for (const auto& q : r.per_query)
        j["queries"].push_back({{"scene_id", q.scene_id},
                                {"box_index", q.box_index},
                                {"ap", q.ap},
                                {"top1_hit", q.top1_hit},
                                {"fallback", q.fallback}});
    os << j.dump(2) << "\n";
}

int cmd_synth(const std::string& config_path, const std::string& out_dir) {
    const SynthConfig cfg = SynthConfig::from_json_file(config_path);
    const Dataset ds = synthesize_dataset(cfg);
    fs::create_directories(out_dir);
    write_annotations(ds.train, out_dir);
    write_annotations(ds.test, out_dir);
    cfg.to_json_file((fs::path(out_dir) / "synth_config.json").string());
    std::cout << "synth: " << ds.train.samples.size() << " train scenes, "
              << ds.test.samples.size() << " test scenes, " << ds.identities.size()
              << " identities, " << ds.test.query_list.size() << " queries -> " << out_dir
              << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
    const TrainConfig cfg = TrainConfig::from_json_file(config_path);
    const DatasetManifest train =
        read_annotations((fs::path(data_dir) / "train.json").string());
    fs::create_directories(out_dir);
    Trainer trainer(cfg, train);
    trainer.set_metrics_path((fs::path(out_dir) / "metrics.jsonl").string());
    trainer.train();
    const std::string ckpt = (fs::path(out_dir) / "model.ckpt").string();
    trainer.save_checkpoint(ckpt);
    cfg.to_json_file((fs::path(out_dir) / "train_config.json").string());
    std::cout << "train: " << cfg.epochs << " epochs done, checkpoint -> " << ckpt << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, int gallery_size, bool masked,
             double mask_fraction, const std::vector<int>& sweep, const std::string& out_path) {
    TrainConfig tc;
    const SiameseModel<double> model = load_model(ckpt, &tc);
    DatasetManifest test = read_annotations((fs::path(data_dir) / "test.json").string());
    if (test.split != Split::test)
        throw ConfigError("eval requires the test split manifest in " + data_dir);
    EvalConfig ec;
    ec.seed = tc.seed;
    if (masked) test = make_masked_testset(test, mask_fraction, ec.seed);

    std::ostringstream json_out, csv_out;
    csv_out << "gallery_size,mAP,top1\n";
    if (!sweep.empty()) {
        const auto results = gallery_sweep(model, test, sweep, ec);
        json_out << "[\n";
        for (size_t i = 0; i < results.size(); ++i) {
            write_eval_json(results[i], json_out);
            if (i + 1 < results.size()) json_out << ",\n";
            csv_out << results[i].gallery_size << "," << results[i].mAP << ","
                    << results[i].top1 << "\n";
        }
        json_out << "]\n";
    } else {
        const EvalResult r = evaluate(model, test, gallery_size, ec);
        write_eval_json(r, json_out);
        csv_out << r.gallery_size << "," << r.mAP << "," << r.top1 << "\n";
    }
    std::cout << csv_out.str();
    if (!out_path.empty()) {
        std::ofstream jf(out_path + ".json"), cf(out_path + ".csv");
        jf << json_out.str();
        cf << csv_out.str();
    } else {
        std::cout << json_out.str();
    }
    return 0;
}

int cmd_ablate(int table, const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir) {
    const TrainConfig base = TrainConfig::from_json_file(config_path);
    const DatasetManifest train =
        read_annotations((fs::path(data_dir) / "train.json").string());
    const DatasetManifest test = read_annotations((fs::path(data_dir) / "test.json").string());
    fs::create_directories(out_dir);

    std::vector<std::string> wanted;
    switch (table) {
        case 1: wanted = {"baseline", "sic", "sic_oic"}; break;
        case 3: wanted = {"baseline", "t3b_many_to_one_only", "t3c_dense_only", "sic"}; break;
        case 4: wanted = {"baseline", "t4b_pos_to_pos", "sic"}; break;
        case 5: wanted = {"sic", "sic_oic", "t5c_mask_instance", "t5d_mask_both"}; break;
        case 6: wanted = {"sic_oic"}; break;
        case 7: wanted = {"sic", "sic_oic"}; break;
        default: throw UsageError("ablate: table must be one of 1,3,4,5,6,7");
    }

    std::map<std::string, TrainConfig> by_name;
    for (const auto& c : ablation_matrix(base)) by_name[c.name] = c;
    EvalConfig ec;
    ec.seed = base.seed;

    std::map<std::string, SiameseModel<double>> models;
    std::ostringstream report;
    report << "config,mAP,top1\n";
    for (const auto& name : wanted) {
        const TrainConfig& cfg = by_name.at(name);
        Trainer trainer(cfg, train);
        trainer.set_metrics_path((fs::path(out_dir) / (name + ".metrics.jsonl")).string());
        trainer.train();
        trainer.save_checkpoint((fs::path(out_dir) / (name + ".ckpt")).string());
        const EvalResult r = evaluate(trainer.model(), test, ec.gallery_size, ec);
        report << name << "," << r.mAP << "," << r.top1 << "\n";
        std::cout << name << ": mAP " << r.mAP << " top1 " << r.top1 << "\n";
        models.emplace(name, trainer.model());
    }

    if (table == 6) {
        const std::vector<int> sizes = {10, 20, 30, 40, 50};
        const auto results = gallery_sweep(models.at("sic_oic"), test, sizes, ec);
        report << "\ngallery_size,mAP,top1\n";
        for (const auto& r : results)
            report << r.gallery_size << "," << r.mAP << "," << r.top1 << "\n";
    }
    if (table == 7) {
        const RobustnessReport rr =
            robustness_report(models.at("sic_oic"), models.at("sic"), test, 0.2, ec);
        report << "\n" << rr.to_table();
    }

    const std::string report_path = (fs::path(out_dir) / "report.csv").string();
    std::ofstream rf(report_path);
    rf << report.str();
    std::cout << "ablate: report -> " << report_path << "\n";
    return 0;
}

int cmd_plot(const std::string& metrics_path, const std::string& out_path) {
    const std::vector<std::string> fields = {"l_mto", "l_o", "l_tri", "l_oim", "l_det", "l_all"};
    auto series = series_from_metrics(metrics_path, fields);
    series.erase(std::remove_if(series.begin(), series.end(),
                                [](const Series& s) { return s.x.empty(); }),
                 series.end());
    if (series.empty()) throw UsageError("plot: no plottable fields in " + metrics_path);

    fs::path out(out_path);
    fs::path png = out, csv = out;
    if (out.extension() == ".png")
        csv.replace_extension(".csv");
    else if (out.extension() == ".csv")
        png.replace_extension(".png");
    else {
        png += ".png";
        csv += ".csv";
    }
    write_series_csv(series, csv.string());
    write_png(png.string(), render_line_chart(series));
    std::cout << "plot: " << series.size() << " series -> " << png.string() << ", "
              << csv.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dicl: weakly supervised person search with intra-image contrast"};
    app.require_subcommand(1);

    std::string config_path, out_path, data_dir, ckpt, metrics_path;
    int gallery_size = 50, table = 1;
    bool masked = false;
    double mask_fraction = 0.2;
    std::vector<int> sweep;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", config_path, "synth config JSON")->required();
    synth->add_option("--out", out_path, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", config_path, "train config JSON")->required();
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--out", out_path, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--gallery-size", gallery_size, "gallery size");
    eval->add_flag("--masked", masked, "evaluate on the pixel-masked test set");
    eval->add_option("--mask-fraction", mask_fraction, "masked pixel fraction");
    eval->add_option("--sweep", sweep, "gallery sizes for a sweep")->delimiter(',');
    eval->add_option("--out", out_path, "output path prefix (writes .json and .csv)");

    auto* ablate = app.add_subcommand("ablate", "run an ablation table");
    ablate->add_option("--table", table, "table id: 1,3,4,5,6,7")->required();
    ablate->add_option("--config", config_path, "base train config JSON")->required();
    ablate->add_option("--data", data_dir, "dataset directory")->required();
    ablate->add_option("--out", out_path, "output directory")->required();

    auto* plot = app.add_subcommand("plot", "render metrics curves");
    plot->add_option("--metrics", metrics_path, "JSON-lines metrics log")->required();
    plot->add_option("--out", out_path, "output path (.png/.csv)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(config_path, out_path);
        if (train->parsed()) return cmd_train(config_path, data_dir, out_path);
        if (eval->parsed())
            return cmd_eval(ckpt, data_dir, gallery_size, masked, mask_fraction, sweep, out_path);
        if (ablate->parsed()) return cmd_ablate(table, config_path, data_dir, out_path);
        if (plot->parsed()) return cmd_plot(metrics_path, out_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
