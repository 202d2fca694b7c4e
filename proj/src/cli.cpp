#include "kilnnet/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "kilnnet/architecture.hpp"
#include "kilnnet/checkpoint.hpp"
#include "kilnnet/csv.hpp"
#include "kilnnet/dataset.hpp"
#include "kilnnet/error.hpp"
#include "kilnnet/evaluator.hpp"
#include "kilnnet/geo_export.hpp"
#include "kilnnet/geo_tiles.hpp"
#include "kilnnet/gradcheck.hpp"
#include "kilnnet/image_io.hpp"
#include "kilnnet/parallel.hpp"
#include "kilnnet/synth.hpp"
#include "kilnnet/trainer.hpp"

namespace kiln::cli {

namespace {

namespace fs = std::filesystem;

struct Globals {
  std::uint64_t seed = 0;
  int threads = 1;
  bool quiet = false;
};

struct NetworkFlags {
  std::string blocks = "10,3,3";
  double width = 1.0;
  int classes = kNumClasses;
  std::string stem = "auto";
  double dropout = 0.2;
  double residual_scale = 0.1;
  bool no_normalize = false;

  NetworkConfig config(int input_size) const {
    NetworkConfig c;
    const auto fields = split_fields(blocks);
    if (fields.size() != 3) {
      fail(ErrorKind::config, "--blocks needs three comma-separated counts, got '" + blocks + "'");
    }
    c.n_a = static_cast<int>(parse_int(fields[0], "--blocks"));
    c.n_b = static_cast<int>(parse_int(fields[1], "--blocks"));
    c.n_c = static_cast<int>(parse_int(fields[2], "--blocks"));
    c.width = width;
    c.num_classes = classes;
    c.input_size = input_size;
    c.stem = parse_stem_kind(stem);
    c.dropout = dropout;
    c.residual_scale = residual_scale;
    c.normalize = !no_normalize;
    c.validate();
    return c;
  }
};

void add_network_flags(CLI::App* sub, NetworkFlags& f) {
  sub->add_option("--blocks", f.blocks, "Block A, B and C counts, comma-separated")
      ->capture_default_str();
  sub->add_option("--width", f.width, "Channel width multiplier in (0,1]")->capture_default_str();
  sub->add_option("--classes", f.classes, "Number of output classes")->capture_default_str();
  sub->add_option("--stem", f.stem, "Stem: auto picks desk below 75 px")
      ->check(CLI::IsMember({"auto", "reference", "desk"}))
      ->capture_default_str();
  sub->add_option("--dropout", f.dropout, "Dropout rate before the classifier")
      ->capture_default_str();
  sub->add_option("--residual-scale", f.residual_scale, "Scale of each residual branch")
      ->capture_default_str();
  sub->add_flag("--no-normalize", f.no_normalize,
                "Use biased convolutions instead of batch normalisation");
}

CLI::Option* add_choice(CLI::App* sub, const std::string& name, std::string& value,
                        std::vector<std::string> choices, const std::string& help) {
  return sub->add_option(name, value, help)
      ->check(CLI::IsMember(std::move(choices)))
      ->capture_default_str();
}

std::string tile_key(std::uint64_t x, std::uint64_t y) {
  return std::to_string(x) + "_" + std::to_string(y);
}

/// Columns zoom, tile_x, tile_y and p_brick_kiln of a probabilities file.
std::vector<ChipProbability> read_chip_probabilities(const std::string& path) {
  const CsvTable table = read_csv(path);
  auto column = [&](const std::string& name) {
    const auto it = std::find(table.header.begin(), table.header.end(), name);
    if (it == table.header.end()) fail(ErrorKind::validation, path + ": missing column " + name);
    return static_cast<std::size_t>(it - table.header.begin());
  };
  const std::string kiln_column = "p_" + std::string(label_name(static_cast<int>(kKilnClass)));
  const std::size_t zc = column("zoom"), xc = column("tile_x"), yc = column("tile_y"),
                    pc = column(kiln_column);
  std::vector<ChipProbability> out;
  for (const auto& row : table.rows) {
    const std::string where = path + ":" + std::to_string(row.line);
    ChipProbability c;
    const auto zoom = parse_int(row.fields[zc], where + ": zoom");
    const auto x = parse_int(row.fields[xc], where + ": tile_x");
    const auto y = parse_int(row.fields[yc], where + ": tile_y");
    if (x < 0 || y < 0) fail(ErrorKind::range, where + ": negative tile index");
    c.tile = TileId{static_cast<int>(zoom), static_cast<std::uint64_t>(x),
                    static_cast<std::uint64_t>(y)};
    c.probability = parse_double(row.fields[pc], where + ": " + kiln_column);
    out.push_back(c);
  }
  return out;
}

/// Every record of the manifest in file order.
ChipSet load_all_chips(const Manifest& manifest) {
  Manifest all = manifest;
  for (auto& r : all.records) r.split = Split::test;
  return load_chips(all, Split::test);
}

ChipSet load_split(const Manifest& manifest, const std::string& split) {
  if (split == "all") return load_all_chips(manifest);
  const Split s = *parse_split(split);
  if (manifest.count(s) == 0) fail(ErrorKind::validation, "manifest has no " + split + " records");
  return load_chips(manifest, s);
}

void require_input_size(const Network& net, const ChipSet& chips) {
  if (static_cast<int>(chips.size) != net.config().input_size) {
    fail(ErrorKind::config, "chips are " + std::to_string(chips.size) +
                                " px but the checkpoint expects " +
                                std::to_string(net.config().input_size));
  }
}

std::string format_shape(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

}  // namespace

std::vector<std::string> subcommands() {
  return {"synth",       "train",        "eval",           "infer",         "param-count",
          "gradcheck",   "tiles expand", "export heatmap", "export geojson"};
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Brick kiln detection from satellite chips", "kilnnet"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_flag("-h,--help", "Print this help message and exit");
  app.set_config("--config", "", "Read flags from a key=value file; command-line flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads for parallel kernels")
      ->check(CLI::Range(1, 256))
      ->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress progress and summaries on standard output");

  std::function<void()> action;

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labelled chip dataset");
  struct {
    std::string out_dir;
    std::size_t per_class = 50;
    std::size_t chip_size = 64;
    SplitFractions fractions;
  } so;
  synth->add_option("--out", so.out_dir, "Output directory (images/ and manifest.csv)")
      ->required();
  synth->add_option("--per-class", so.per_class, "Chips per class")->capture_default_str();
  synth->add_option("--chip-size", so.chip_size, "Chip edge in pixels (>= 16)")
      ->capture_default_str();
  synth->add_option("--train", so.fractions.train, "Train fraction")->capture_default_str();
  synth->add_option("--val", so.fractions.val, "Validation fraction")->capture_default_str();
  synth->add_option("--test", so.fractions.test, "Test fraction")->capture_default_str();
  synth->callback([&] {
    action = [&] {
      SynthOptions o;
      o.per_class = so.per_class;
      o.chip_size = so.chip_size;
      o.fractions = so.fractions;
      o.seed = g.seed;
      const Manifest m = synth_generate(so.out_dir, o);
      if (!g.quiet) {
        out << "wrote " << m.records.size() << " chips (train " << m.count(Split::train)
            << ", val " << m.count(Split::val) << ", test " << m.count(Split::test) << ") to "
            << (fs::path(so.out_dir) / "manifest.csv").string() << "\n";
      }
    };
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a network on a manifest");
  NetworkFlags train_net;
  TrainConfig tc;
  struct {
    std::string manifest;
    std::string augment = "none";
    int input_size = 0;
  } to;
  train_cmd->add_option("--manifest", to.manifest, "Chip manifest CSV")->required();
  train_cmd->add_option("--out", tc.out_dir,
                        "Output directory for train_log.csv, best.ckpt and last.ckpt")
      ->required();
  add_network_flags(train_cmd, train_net);
  train_cmd->add_option("--input-size", to.input_size, "Chip edge in pixels; 0 reads it from the data")
      ->capture_default_str();
  train_cmd->add_option("--epochs", tc.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--batch-size", tc.batch_size, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--lr", tc.learning_rate, "Learning rate")->capture_default_str();
  train_cmd->add_option("--momentum", tc.momentum, "SGD momentum in [0,1)")->capture_default_str();
  train_cmd->add_option("--weight-decay", tc.weight_decay, "L2 weight decay")
      ->capture_default_str();
  train_cmd->add_option("--checkpoint-every", tc.checkpoint_every,
                        "Also keep a checkpoint every N epochs (0: best and last only)")
      ->capture_default_str();
  add_choice(train_cmd, "--augment", to.augment, {"none", "flip"}, "Training augmentation");
  train_cmd->add_flag("--timing", tc.timing, "Record wall time per epoch in the log");
  train_cmd->callback([&] {
    action = [&] {
      const Manifest m = load_manifest(to.manifest);
      int size = to.input_size;
      if (size == 0) {
        const auto it = std::find_if(m.records.begin(), m.records.end(),
                                     [](const ChipRecord& r) { return r.split == Split::train; });
        if (it == m.records.end()) fail(ErrorKind::validation, "manifest has no train records");
        size = static_cast<int>(read_png(m.resolve(*it)).width);
      }
      tc.seed = g.seed;
      tc.augment = parse_augment(to.augment);
      Network net(train_net.config(size), g.seed);
      const auto result = train(net, m, tc, [&](const EpochRecord& e) {
        if (g.quiet) return;
        out << "epoch " << e.epoch << " train_loss " << format_double(e.train_loss)
            << " val_loss " << format_double(e.val_loss) << " val_acc "
            << format_double(e.val_acc);
        if (tc.timing) out << " seconds " << format_fixed(e.seconds, 2);
        out << "\n" << std::flush;
      });
      if (!g.quiet) {
        out << "best epoch " << result.best_epoch << "; checkpoints and log in " << tc.out_dir
            << "\n";
      }
    };
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Kiln-vs-rest metrics at one or more thresholds");
  struct {
    std::string checkpoint, manifest, split = "test", out_path;
    std::vector<double> thresholds{0.5};
    std::size_t batch_size = 64;
  } eo;
  eval_cmd->add_option("--checkpoint", eo.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--manifest", eo.manifest, "Chip manifest CSV")->required();
  add_choice(eval_cmd, "--split", eo.split, {"train", "val", "test", "all"}, "Records to evaluate");
  eval_cmd->add_option("--thresholds", eo.thresholds, "Kiln probability thresholds, comma-separated")
      ->delimiter(',')
      ->capture_default_str();
  eval_cmd->add_option("--out", eo.out_path, "Metrics CSV to write")->required();
  eval_cmd->add_option("--batch-size", eo.batch_size, "Inference batch size")->capture_default_str();
  eval_cmd->callback([&] {
    action = [&] {
      Network net = restore(load_checkpoint(eo.checkpoint));
      const Manifest m = load_manifest(eo.manifest);
      const ChipSet chips = load_split(m, eo.split);
      require_input_size(net, chips);
      const Tensor probs = predict(net, chips, eo.batch_size);
      std::vector<bool> actual;
      for (int label : chips.labels) actual.push_back(label == static_cast<int>(kKilnClass));
      const auto reports = sweep_thresholds(probs.values(), probs.dim(1), actual, eo.thresholds);
      write_metrics_csv(eo.out_path, reports);
      if (!g.quiet) out << metrics_csv(reports);
    };
  });

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "Class probabilities for every chip");
  struct {
    std::string checkpoint, manifest, split = "all", out_path;
    std::size_t batch_size = 64;
  } io;
  infer_cmd->add_option("--checkpoint", io.checkpoint, "Checkpoint file")->required();
  infer_cmd->add_option("--manifest", io.manifest, "Chip manifest CSV")->required();
  add_choice(infer_cmd, "--split", io.split, {"train", "val", "test", "all"}, "Records to score");
  infer_cmd->add_option("--out", io.out_path, "Probabilities CSV to write")->required();
  infer_cmd->add_option("--batch-size", io.batch_size, "Inference batch size")
      ->capture_default_str();
  infer_cmd->callback([&] {
    action = [&] {
      Network net = restore(load_checkpoint(io.checkpoint));
      if (net.config().num_classes != kNumClasses) {
        fail(ErrorKind::config, "checkpoint has " + std::to_string(net.config().num_classes) +
                                    " classes, the taxonomy has " + std::to_string(kNumClasses));
      }
      const Manifest m = load_manifest(io.manifest);
      const ChipSet chips = load_split(m, io.split);
      require_input_size(net, chips);
      const Tensor probs = predict(net, chips, io.batch_size);
      std::string csv = "image_path,label,zoom,tile_x,tile_y,lat,lon";
      for (auto name : kLabelNames) csv += ",p_" + std::string(name);
      csv += "\n";
      const auto v = probs.values();
      for (std::size_t i = 0; i < chips.records.size(); ++i) {
        const auto& r = m.records[chips.records[i]];
        csv += r.image_path + "," + std::string(label_name(r.label)) + "," +
               std::to_string(r.zoom) + "," + std::to_string(r.tile_x) + "," +
               std::to_string(r.tile_y) + "," + format_double(r.lat) + "," + format_double(r.lon);
        for (std::size_t k = 0; k < kNumClasses; ++k) csv += "," + format_double(v[i * kNumClasses + k]);
        csv += "\n";
      }
      write_file(io.out_path, csv);
      if (!g.quiet) out << "scored " << chips.records.size() << " chips into " << io.out_path << "\n";
    };
  });

  // param-count
  auto* pc = app.add_subcommand("param-count", "Learnable parameter count and per-stage table");
  NetworkFlags pc_net;
  struct {
    int input_size = 299;
    std::string table;
  } po;
  add_network_flags(pc, pc_net);
  pc->add_option("--input-size", po.input_size, "Input edge in pixels")->capture_default_str();
  pc->add_option("--table", po.table, "Also write the per-stage table to this CSV file");
  pc->callback([&] {
    action = [&] {
      const Network net(pc_net.config(po.input_size), g.seed);
      std::string table = "stage,kind,output,parameters,buffers\n";
      std::size_t buffers = 0;
      for (const auto& s : describe(net)) {
        table += s.name + "," + std::string(to_string(s.kind)) + "," + format_shape(s.output) +
                 "," + std::to_string(s.parameters) + "," + std::to_string(s.buffers) + "\n";
        buffers += s.buffers;
      }
      const std::size_t total = param_count(net);
      table += "total,,," + std::to_string(total) + "," + std::to_string(buffers) + "\n";
      if (!po.table.empty()) write_file(po.table, table);
      out << total << "\n";
      if (!g.quiet) out << table;
    };
  });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every layer gradient");
  struct {
    std::size_t trials = 20;
    double eps = 1e-5;
    double tolerance = 1e-4;
    std::string out_path;
    bool network = false;
    std::size_t coords = 4;
    int network_size = 32;
  } go;
  gc->add_option("--trials", go.trials, "Random trials per operation")->capture_default_str();
  gc->add_option("--eps", go.eps, "Central-difference step")->capture_default_str();
  gc->add_option("--tolerance", go.tolerance, "Largest accepted relative error")
      ->capture_default_str();
  gc->add_option("--out", go.out_path, "Also write the report to this CSV file");
  gc->add_flag("--network", go.network,
               "Also check a (1,1,1) width 0.125 network end to end, without normalisation");
  gc->add_option("--coords", go.coords, "Sampled coordinates per parameter tensor (--network)")
      ->capture_default_str();
  gc->add_option("--network-size", go.network_size, "Input edge for --network")
      ->capture_default_str();
  gc->callback([&] {
    action = [&] {
      if (!(go.eps > 0.0)) fail(ErrorKind::config, "--eps must be positive");
      std::string csv = "check,trials,checked,skipped_kinks,max_rel_error,pass\n";
      bool ok = true;
      auto add_row = [&](const std::string& name, std::size_t trials, const GradCheckResult& r) {
        const bool pass = r.max_rel_error < go.tolerance;
        ok = ok && pass;
        csv += name + "," + std::to_string(trials) + "," + std::to_string(r.checked) + "," +
               std::to_string(r.skipped_kinks) + "," + format_double(r.max_rel_error) + "," +
               (pass ? "1" : "0") + "\n";
      };
      for (const auto& rep : op_gradient_suite(go.trials, g.seed, go.eps)) {
        add_row(rep.op, rep.trials, rep.worst);
      }
      if (go.network) {
        NetworkConfig c;
        c.n_a = c.n_b = c.n_c = 1;
        c.width = 0.125;
        c.input_size = go.network_size;
        c.normalize = false;
        add_row("network", 1, network_gradient_check(c, g.seed, 2, go.coords, Mode::train, go.eps));
      }
      if (!go.out_path.empty()) write_file(go.out_path, csv);
      if (!g.quiet) out << csv;
      if (!ok) fail(ErrorKind::numeric, "gradient check exceeded tolerance " + format_double(go.tolerance));
    };
  });

  // tiles expand
  auto* tiles = app.add_subcommand("tiles", "Tile arithmetic");
  tiles->require_subcommand(1);
  auto* expand = tiles->add_subcommand("expand", "Expand z17 tiles into their 64 z20 chips");
  struct {
    std::string in, out_path, mode = "mercator";
  } xo;
  expand->add_option("--in", xo.in, "CSV with tile_x,tile_y columns (zoom 17)")->required();
  expand->add_option("--out", xo.out_path, "Chip coordinates CSV to write")->required();
  add_choice(expand, "--mode", xo.mode, {"mercator", "paper"},
             "Coordinates: web-mercator tile centres or the linear z17 map");
  expand->callback([&] {
    action = [&] {
      const CsvTable table = read_csv(xo.in);
      auto column = [&](const std::string& name) -> std::optional<std::size_t> {
        const auto it = std::find(table.header.begin(), table.header.end(), name);
        if (it == table.header.end()) return std::nullopt;
        return static_cast<std::size_t>(it - table.header.begin());
      };
      const auto xc = column("tile_x"), yc = column("tile_y"), zc = column("zoom");
      if (!xc || !yc) fail(ErrorKind::validation, xo.in + ": needs tile_x and tile_y columns");
      const CoordinateMode mode = parse_coordinate_mode(xo.mode);
      std::string csv = "parent_x,parent_y,tile_x,tile_y,zoom,lat,lon,coordinate_mode\n";
      std::size_t rows = 0;
      for (const auto& row : table.rows) {
        const std::string where = xo.in + ":" + std::to_string(row.line);
        if (zc && parse_int(row.fields[*zc], where + ": zoom") != kParentZoom) {
          fail(ErrorKind::zoom, where + ": expected zoom 17");
        }
        const auto x = parse_int(row.fields[*xc], where + ": tile_x");
        const auto y = parse_int(row.fields[*yc], where + ": tile_y");
        if (x < 0 || y < 0) fail(ErrorKind::range, where + ": negative tile index");
        const TileId parent{kParentZoom, static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(y)};
        try {
          parent.validate();
        } catch (const Error& e) {
          throw Error(e.kind(), where + ": " + e.what());
        }
        for (const auto& child : children_z20(parent)) {
          const GeoPoint p = chip_location(child, mode);
          csv += std::to_string(parent.x) + "," + std::to_string(parent.y) + "," +
                 std::to_string(child.x) + "," + std::to_string(child.y) + "," +
                 std::to_string(child.zoom) + "," + format_double(p.lat) + "," +
                 format_double(p.lon) + "," + std::string(to_string(mode)) + "\n";
          ++rows;
        }
      }
      write_file(xo.out_path, csv);
      if (!g.quiet) out << "wrote " << rows << " chips to " << xo.out_path << "\n";
    };
  });

  // export
  auto* exp = app.add_subcommand("export", "Heatmaps and detection maps from chip probabilities");
  exp->require_subcommand(1);
  auto* heat = exp->add_subcommand("heatmap", "One 8x8 PGM heatmap per z17 tile");
  struct {
    std::string probs, out_dir, parent, aggregation = "max";
    bool skip_incomplete = false;
  } ho;
  heat->add_option("--probs", ho.probs, "Probabilities CSV from infer")->required();
  heat->add_option("--out-dir", ho.out_dir, "Directory for heatmap_17_<x>_<y>.pgm files")
      ->required();
  heat->add_option("--parent", ho.parent, "Only this z17 tile, as x,y");
  add_choice(heat, "--aggregation", ho.aggregation, {"max", "mean"},
             "How repeated chips combine into a cell");
  heat->add_flag("--skip-incomplete", ho.skip_incomplete,
                 "Skip z17 tiles with missing chips instead of failing");
  heat->callback([&] {
    action = [&] {
      const auto chips = aggregate_chips(read_chip_probabilities(ho.probs),
                                         parse_aggregation(ho.aggregation));
      std::set<TileId> parents;
      if (!ho.parent.empty()) {
        const auto f = split_fields(ho.parent);
        if (f.size() != 2) fail(ErrorKind::config, "--parent needs x,y");
        const TileId p{kParentZoom, static_cast<std::uint64_t>(parse_int(f[0], "--parent")),
                       static_cast<std::uint64_t>(parse_int(f[1], "--parent"))};
        p.validate();
        parents.insert(p);
      } else {
        for (const auto& [tile, prob] : chips) parents.insert(parent_z17(tile));
      }
      fs::create_directories(ho.out_dir);
      std::size_t written = 0, skipped = 0;
      for (const auto& p : parents) {
        std::optional<HeatmapGrid> grid;
        try {
          grid = build_heatmap(p, chips);
        } catch (const Error& e) {
          if (!(ho.skip_incomplete && e.kind() == ErrorKind::completeness)) throw;
          ++skipped;
          if (!g.quiet) out << "skipped " << e.what() << "\n";
          continue;
        }
        const auto path = fs::path(ho.out_dir) / ("heatmap_17_" + tile_key(p.x, p.y) + ".pgm");
        write_heatmap_pgm(*grid, path.string());
        ++written;
        if (!g.quiet) out << "wrote " << path.string() << "\n";
      }
      if (!g.quiet) out << written << " heatmaps written, " << skipped << " skipped\n";
    };
  });

  auto* geo = exp->add_subcommand("geojson", "GeoJSON points for chips at or above a threshold");
  struct {
    std::string probs, out_path, mode = "mercator", aggregation = "max";
    double threshold = 0.5;
  } jo;
  geo->add_option("--probs", jo.probs, "Probabilities CSV from infer")->required();
  geo->add_option("--out", jo.out_path, "GeoJSON file to write")->required();
  geo->add_option("--threshold", jo.threshold, "Smallest kiln probability exported")
      ->capture_default_str();
  add_choice(geo, "--mode", jo.mode, {"mercator", "paper"},
             "Coordinates: web-mercator tile centres or the linear z17 map");
  add_choice(geo, "--aggregation", jo.aggregation, {"max", "mean"},
             "How repeated chips combine");
  geo->callback([&] {
    action = [&] {
      const auto chips = aggregate_chips(read_chip_probabilities(jo.probs),
                                         parse_aggregation(jo.aggregation));
      const auto dets = detections(chips, jo.threshold, parse_coordinate_mode(jo.mode));
      write_detections_geojson(dets, jo.out_path);
      if (!g.quiet) out << "wrote " << dets.size() << " detections to " << jo.out_path << "\n";
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    // Help for the deepest subcommand named on the line.
    const CLI::App* target = &app;
    std::string prefix;
    while (true) {
      const auto subs = target->get_subcommands();
      if (subs.empty()) break;
      prefix += (prefix.empty() ? "" : " ") + target->get_name();
      target = subs.front();
    }
    out << target->help(prefix);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "kilnnet: " << e.what() << "\n";
    return kInvalid;
  }

  try {
    set_num_threads(g.threads);
    if (action) action();
    return kOk;
  } catch (const Error& e) {
    err << "kilnnet: " << e.what() << "\n";
    return is_validation_kind(e.kind()) ? kInvalid : kFailed;
  } catch (const fs::filesystem_error& e) {
    err << "kilnnet: io error: " << e.what() << "\n";
    return kFailed;
  } catch (const std::exception& e) {
    err << "kilnnet: " << e.what() << "\n";
    return kFailed;
  }
}

}  // namespace kiln::cli
