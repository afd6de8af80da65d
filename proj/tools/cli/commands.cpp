#include "cli/commands.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "caselab/diagnostics.hpp"
#include "caselab/errors.hpp"
#include "cli/stubs.hpp"

namespace caselab::cli {
namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f.flush()) throw IoError("write failed: " + path.string());
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Json report_header(const RunConfig& c, std::string_view command) {
  Json j;
  j["command"] = command;
  if (c.timestamp) j["generated_at"] = utc_now();
  Json cfg;
  cfg["seed"] = c.seed;
  cfg["per_class"] = c.per_class;
  cfg["epochs"] = c.epochs;
  cfg["learning_rate"] = c.learning_rate;
  cfg["k_contrast"] = c.k_contrast;
  cfg["beta"] = c.beta;
  cfg["fraction"] = c.fraction;
  cfg["tau"] = c.tau;
  cfg["methods"] = c.methods;
  cfg["attribution_layer"] = c.attribution_layer ? Json(*c.attribution_layer) : Json(nullptr);
  cfg["case_weighting"] = weighting_name(c.case_weighting);
  cfg["ablation_fill"] = fill_name(c.ablation_fill);
  j["config"] = cfg;
  return j;
}

Json optional_real(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::string csv_real(const std::optional<double>& v) { return v ? format_real(*v) : "NA"; }

DatasetSplit load_split(const RunConfig& c) {
  const auto images = c.data ? load_dataset(*c.data) : generate(c.seed, c.per_class);
  return split(images, {}, c.seed);
}

struct Workspace {
  DatasetSplit data;
  ModelBundle model;
  ConfusionMatrix confusion;
  double fill = 0.0;
};

Workspace load_workspace(const RunConfig& c) {
  Workspace w;
  w.data = load_split(c);
  if (w.data.validation.empty() || w.data.test.empty()) {
    throw UsageError("validation and test splits must be non-empty; increase per_class");
  }
  w.model = load_weights(c.weights_path());
  if (c.attribution_layer) {
    try {
      w.model = with_attribution_layer(std::move(w.model), *c.attribution_layer);
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("attribution_layer: ") + e.what());
    }
  }
  const Shape a = w.model.activation_shape();
  if (a[1] * c.beta != kImageSide || a[2] * c.beta != kImageSide) {
    throw UsageError("beta " + std::to_string(c.beta) + " does not map the " + std::to_string(a[1]) + "x" +
                     std::to_string(a[2]) + " activation to " + std::to_string(kImageSide) + "x" +
                     std::to_string(kImageSide));
  }
  w.confusion = confusion_matrix(w.model, w.data.validation);
  w.fill = c.ablation_fill == AblationFill::kMean ? mean_pixel(w.data.train) : 0.0;
  return w;
}

std::vector<NamedMethod> resolve_methods(const RunConfig& c, const ConfusionMatrix& confusion) {
  const CaseOptions options{c.k_contrast, c.beta, CaseOptions{}.epsilon, c.case_weighting};
  std::vector<NamedMethod> out;
  for (const auto& name : c.methods) {
    if (auto stub = stub_method(name, c.seed)) {
      out.push_back({name, std::move(*stub)});
    } else if (auto m = parse_method(name)) {
      out.push_back({name, make_saliency_fn(*m, confusion, options)});
    } else {
      throw UsageError("unknown method '" + name + "'");
    }
  }
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

// ---------------------------------------------------------------------------

void cmd_gen_data(const RunConfig& c, const std::optional<fs::path>& export_path, std::ostream& out) {
  const auto images = generate(c.seed, c.per_class);
  const auto counts = class_counts(images);
  std::ostringstream csv;
  csv << "class,name,count\n";
  for (ClassIndex k = 0; k < kClassCount; ++k) {
    csv << k << ',' << class_name(k) << ',' << counts[k] << '\n';
  }
  ensure_dir(c.output_dir);
  write_text(c.output_dir / "dataset_counts.csv", csv.str());
  if (export_path) save_dataset(*export_path, images);
  out << csv.str();
  out << "total " << images.size() << " images";
  if (export_path) out << ", written to " << export_path->string();
  out << '\n';
}

void cmd_train(const RunConfig& c, std::ostream& out) {
  const DatasetSplit data = load_split(c);
  if (data.train.empty()) throw UsageError("training split is empty; increase per_class");
  const TrainingResult r = train(data, {c.epochs, c.learning_rate, c.seed, 32});

  std::ostringstream hist;
  hist << "epoch,loss,train_acc,val_acc\n";
  for (const auto& e : r.history) {
    hist << e.epoch << ',' << format_real(e.loss) << ',' << format_real(e.train_accuracy) << ','
         << format_real(e.val_accuracy) << '\n';
  }
  auto acc = [&](const std::vector<LabeledImage>& part) -> std::optional<double> {
    if (part.empty()) return std::nullopt;
    return accuracy(r.model, part);
  };
  const auto train_acc = acc(data.train);
  const auto val_acc = acc(data.validation);
  const auto test_acc = acc(data.test);

  Json j = report_header(c, "train");
  j["images"] = {{"train", data.train.size()}, {"validation", data.validation.size()},
                 {"test", data.test.size()}};
  j["accuracy"] = {{"train", optional_real(train_acc)}, {"validation", optional_real(val_acc)},
                   {"test", optional_real(test_acc)}};
  j["final_loss"] = r.history.empty() ? Json(nullptr) : Json(r.history.back().loss);

  ensure_dir(c.output_dir);
  save_weights(r.model, c.weights_path());
  write_text(c.output_dir / "history.csv", hist.str());
  write_text(c.output_dir / "train_report.json", j.dump(2) + "\n");

  out << "epochs " << r.history.size() << '\n'
      << "train accuracy " << csv_real(train_acc) << '\n'
      << "validation accuracy " << csv_real(val_acc) << '\n'
      << "test accuracy " << csv_real(test_acc) << '\n'
      << "weights " << c.weights_path().string() << '\n';
}

void cmd_saliency(const RunConfig& c, const SaliencyRequest& req, std::ostream& out) {
  const Workspace w = load_workspace(c);
  if (req.image_index >= w.data.test.size()) {
    throw UsageError("image index " + std::to_string(req.image_index) + " out of range; test split has " +
                     std::to_string(w.data.test.size()) + " images");
  }
  const Tensor& pixels = w.data.test[req.image_index].pixels;
  const auto [top1, top2] = top_two(logits(w.model, pixels));

  std::vector<ClassIndex> classes;
  if (req.class_spec == "top1") {
    classes = {top1};
  } else if (req.class_spec == "top2") {
    classes = {top2};
  } else if (req.class_spec == "top2pair") {
    classes = {top1, top2};
  } else {
    std::size_t k = kClassCount;
    const auto* end = req.class_spec.data() + req.class_spec.size();
    const auto res = std::from_chars(req.class_spec.data(), end, k);
    if (res.ec != std::errc{} || res.ptr != end || k >= kClassCount) {
      throw UsageError("--class must be top1, top2, top2pair or a class index below " +
                       std::to_string(kClassCount));
    }
    classes = {k};
  }

  std::vector<SaliencyMap> maps;
  for (const auto& m : resolve_methods(c, w.confusion)) {
    for (ClassIndex u : classes) maps.push_back(m.fn(w.model, pixels, u));
  }
  ensure_dir(c.output_dir);
  out << "image " << req.image_index << " label " << class_name(w.data.test[req.image_index].label)
      << " top1 " << class_name(top1) << " top2 " << class_name(top2) << '\n';
  for (const auto& m : maps) {
    const fs::path stem = c.output_dir / map_file_stem(m, req.image_index);
    write_pgm(fs::path(stem).concat(".pgm"), m);
    write_csv(fs::path(stem).concat(".csv"), m);
    out << stem.string() << ".{pgm,csv}\n";
  }
}

void cmd_rq1(const RunConfig& c, std::ostream& out) {
  const Workspace w = load_workspace(c);
  const auto images = index_images(w.data.test);
  const auto methods = resolve_methods(c, w.confusion);

  struct Outcome {
    std::string name;
    Rq1Result result;
    std::optional<std::string> degenerate;
  };
  std::vector<Outcome> outcomes;
  for (const auto& m : methods) {
    Outcome o{m.name, {}, std::nullopt};
    try {
      o.result = rq1_experiment(w.model, m.fn, images, c.fraction, kDefaultAgreementThreshold, c.threads);
    } catch (const DegenerateSampleError& e) {
      // Every agreement sat exactly on the threshold. Keep the samples so
      // they can still be reported.
      o.degenerate = e.what();
      std::vector<AgreementSample> samples;
      for (const auto& img : images) {
        const auto [t1, t2] = top_two(logits(w.model, img.image.pixels));
        if (t1 != img.image.label) continue;
        samples.push_back({img.index, t1, t2,
                           feature_agreement(m.fn(w.model, img.image.pixels, t1), m.fn(w.model, img.image.pixels, t2),
                                             c.fraction)});
      }
      o.result.samples = std::move(samples);
    }
    outcomes.push_back(std::move(o));
  }

  Json report = report_header(c, "rq1");
  report["test_images"] = images.size();
  report["threshold"] = kDefaultAgreementThreshold;
  std::ostringstream summary;
  summary << "method,n,W_statistic,p_value,reject\n";
  std::vector<std::pair<fs::path, std::string>> files;
  for (const auto& o : outcomes) {
    std::ostringstream per;
    per << "image_index,top1,top2,agreement\n";
    std::vector<double> agreements;
    for (const auto& s : o.result.samples) {
      per << s.image_index << ',' << s.top1_class << ',' << s.top2_class << ',' << format_real(s.agreement)
          << '\n';
      agreements.push_back(s.agreement);
    }
    std::ostringstream hist;
    hist << "bin_lower,count\n";
    for (const auto& b : histogram(agreements)) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%.2f", b.lower);
      hist << buf << ',' << b.count << '\n';
    }
    files.emplace_back(c.output_dir / ("rq1_" + o.name + ".csv"), per.str());
    files.emplace_back(c.output_dir / ("agreement_hist_" + o.name + ".csv"), hist.str());

    const std::size_t n = agreements.size();
    Json row;
    row["method"] = o.name;
    row["n"] = n;
    row["median_agreement"] = median(agreements);
    if (o.degenerate) {
      summary << o.name << ',' << n << ",NA,NA,NA\n";
      row["n_effective"] = 0;
      row["W_statistic"] = nullptr;
      row["p_value"] = nullptr;
      row["exact"] = nullptr;
      row["reject"] = nullptr;
      row["note"] = *o.degenerate;
    } else {
      const auto& t = o.result.test;
      summary << o.name << ',' << n << ',' << format_real(t.statistic) << ',' << format_real(t.p_value) << ','
              << (t.reject_at_05 ? "true" : "false") << '\n';
      row["n_effective"] = t.n_effective;
      row["W_statistic"] = t.statistic;
      row["p_value"] = t.p_value;
      row["exact"] = t.exact;
      row["reject"] = t.reject_at_05;
      row["note"] = "";
    }
    report["methods"].push_back(row);
    out << o.name << ": n=" << n << " median=" << format_real(median(agreements))
        << (o.degenerate ? " p=NA (" + *o.degenerate + ")" : " p=" + format_real(o.result.test.p_value))
        << '\n';
  }
  files.emplace_back(c.output_dir / "rq1_summary.csv", summary.str());
  files.emplace_back(c.output_dir / "rq1_report.json", report.dump(2) + "\n");
  ensure_dir(c.output_dir);
  for (const auto& [path, text] : files) write_text(path, text);
}

void cmd_rq2(const RunConfig& c, std::ostream& out) {
  const Workspace w = load_workspace(c);
  const auto images = index_images(w.data.test);
  const auto methods = resolve_methods(c, w.confusion);
  const Rq2Result r = rq2_experiment(w.model, methods, images, c.fraction, w.fill, c.threads);

  std::ostringstream drops;
  drops << "image_index,method,before,after,drop\n";
  std::map<std::string, std::vector<double>> by_method;
  for (const auto& d : r.drops) {
    drops << d.image_index << ',' << d.method << ',' << format_real(d.confidence_before) << ','
          << format_real(d.confidence_after) << ',' << format_real(d.drop) << '\n';
    by_method[d.method].push_back(d.drop);
  }
  const auto case_it = by_method.find("case");

  Json report = report_header(c, "rq2");
  report["test_images"] = images.size();
  report["fill_value"] = w.fill;
  std::ostringstream summary;
  summary << "method,mean,sd,p_vs_case\n";
  for (const auto& row : r.rows) {
    summary << row.method << ',' << format_real(row.mean_drop) << ',' << format_real(row.sd_drop) << ','
            << (row.vs_case ? format_real(row.vs_case->p_value) : "NA") << '\n';
    Json j;
    j["method"] = row.method;
    j["n"] = row.n;
    j["mean"] = row.mean_drop;
    j["sd"] = row.sd_drop;
    j["t_statistic"] = row.vs_case ? Json(row.vs_case->statistic) : Json(nullptr);
    j["p_vs_case"] = row.vs_case ? Json(row.vs_case->p_value) : Json(nullptr);
    // Opposite direction (H1: this method's drop exceeds CASE's).
    Json reverse(nullptr);
    if (row.vs_case && case_it != by_method.end()) {
      reverse = paired_t_one_sided_greater(by_method.at(row.method), case_it->second).p_value;
    }
    j["p_case_smaller"] = reverse;
    j["note"] = row.note;
    report["methods"].push_back(j);
    out << row.method << ": n=" << row.n << " mean=" << format_real(row.mean_drop)
        << " sd=" << format_real(row.sd_drop)
        << " p_vs_case=" << (row.vs_case ? format_real(row.vs_case->p_value) : "NA");
    if (!row.note.empty()) out << " (" << row.note << ")";
    out << '\n';
    if (!row.vs_case && row.method != "case" && case_it != by_method.end()) {
      std::fprintf(stderr, "warning: %s: %s; p_vs_case left empty\n", row.method.c_str(), row.note.c_str());
    }
  }
  ensure_dir(c.output_dir);
  write_text(c.output_dir / "rq2_drops.csv", drops.str());
  write_text(c.output_dir / "rq2_summary.csv", summary.str());
  write_text(c.output_dir / "rq2_report.json", report.dump(2) + "\n");
}

void cmd_sparsity(const RunConfig& c, std::ostream& out) {
  const Workspace w = load_workspace(c);
  const auto images = index_images(w.data.test);
  const SparsityResult r = sparsity_experiment(w.model, images, c.tau, c.threads);
  const std::size_t channels = w.model.activation_shape()[0];

  std::ostringstream per;
  per << "image_index,label,active_channels\n";
  std::vector<std::size_t> hist(channels + 1, 0);
  std::vector<std::size_t> per_class_n(kClassCount, 0);
  for (const auto& rec : r.per_image) {
    per << rec.image_index << ',' << rec.label << ',' << rec.active_channels << '\n';
    ++hist.at(rec.active_channels);
    ++per_class_n.at(rec.label);
  }
  std::ostringstream summary;
  summary << "class,mean_active_channels\n";
  Json report = report_header(c, "sparsity");
  report["tau"] = c.tau;
  report["channels"] = channels;
  for (ClassIndex k = 0; k < kClassCount; ++k) {
    summary << k << ',' << csv_real(r.per_class_mean[k]) << '\n';
    report["classes"].push_back({{"class", k},
                                 {"name", class_name(k)},
                                 {"n", per_class_n[k]},
                                 {"mean_active_channels", optional_real(r.per_class_mean[k])}});
    out << class_name(k) << ": n=" << per_class_n[k] << " mean_active=" << csv_real(r.per_class_mean[k]) << '\n';
  }
  std::ostringstream hcsv;
  hcsv << "active_channels,count\n";
  for (std::size_t i = 0; i < hist.size(); ++i) hcsv << i << ',' << hist[i] << '\n';

  ensure_dir(c.output_dir);
  write_text(c.output_dir / "sparsity.csv", summary.str());
  write_text(c.output_dir / "sparsity_per_image.csv", per.str());
  write_text(c.output_dir / "sparsity_hist.csv", hcsv.str());
  write_text(c.output_dir / "sparsity_report.json", report.dump(2) + "\n");
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 2;
  if (dynamic_cast<const ConfigFileError*>(&e) || dynamic_cast<const IoError*>(&e) ||
      dynamic_cast<const ParseError*>(&e)) {
    return 3;
  }
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const DegenerateSampleError*>(&e)) return 4;
  if (dynamic_cast<const std::invalid_argument*>(&e) || dynamic_cast<const std::out_of_range*>(&e)) return 2;
  return 1;
}

}  // namespace caselab::cli
