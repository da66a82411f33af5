#include "ulab/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ulab {

std::string impact_csv(std::span<const ImpactRecord> records) {
  std::ostringstream out;
  out << "subject,degree_total,degree_out,degree_in,relation_deleted,object_deleted,"
         "acc_pre,acc_post,impact\n";
  for (const ImpactRecord& r : records) {
    out << r.subject_id << ',' << r.degree_total << ',' << r.degree_out << ',' << r.degree_in
        << ',' << r.relation_deleted << ',' << r.object_deleted << ','
        << format_double(r.acc_pre, 6) << ',' << format_double(r.acc_post, 6) << ','
        << format_double(r.impact, 6) << '\n';
  }
  return out.str();
}

std::vector<ImpactRecord> impact_csv_parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), errc::io, "impact.csv is empty");
  std::vector<ImpactRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ImpactRecord r;
    char c;
    ls >> r.subject_id >> c >> r.degree_total >> c >> r.degree_out >> c >> r.degree_in >> c >>
        r.relation_deleted >> c >> r.object_deleted >> c >> r.acc_pre >> c >> r.acc_post >> c >>
        r.impact;
    require(!ls.fail(), errc::io, "impact.csv row parse failure: " + line);
    out.push_back(r);
  }
  return out;
}

std::string efficacy_csv(std::span<const ImpactRecord> records) {
  std::ostringstream out;
  out << "subject,efficacy,exact_rel_err,delta_sigma_ratio\n";
  for (const ImpactRecord& r : records) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3e,%.3e", r.exact_solve_rel_err, r.delta_sigma_ratio);
    out << r.subject_id << ',' << format_double(r.surface_efficacy, 6) << ',' << buf << '\n';
  }
  return out.str();
}

std::string pca_csv(const PcaResult& p, const NameTable& names, NameFamily family) {
  require(p.k >= 2, errc::validation, "pca csv needs at least two components");
  const int base =
      family == NameFamily::entities ? 0 : NameTable::kParaphrases * names.n_entities();
  std::ostringstream out;
  out << "name,pc1,pc2,entity_id\n";
  for (int i = 0; i < p.n; ++i) {
    out << names.name(base + i) << ',' << format_double(p.coords[size_t(i) * p.k], 6) << ','
        << format_double(p.coords[size_t(i) * p.k + 1], 6) << ','
        << i / NameTable::kParaphrases << '\n';
  }
  return out.str();
}

namespace {

std::string svg_open(int w, int h) {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n"
      << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  return out.str();
}

std::string text_at(double x, double y, const std::string& s, int size = 11,
                    const std::string& anchor = "start") {
  std::ostringstream out;
  out << "<text x=\"" << format_double(x, 1) << "\" y=\"" << format_double(y, 1)
      << "\" font-family=\"sans-serif\" font-size=\"" << size << "\" text-anchor=\"" << anchor
      << "\">" << s << "</text>\n";
  return out.str();
}

const char* kPalette[6] = {"#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

}  // namespace

std::string degree_impact_svg(std::span<const ImpactRecord> records, const std::string& title) {
  const int W = 900, H = 420, ml = 60, mr = 70, mt = 40, mb = 50;
  const int pw = W - ml - mr, ph = H - mt - mb;

  std::vector<const ImpactRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
    return a->degree_total > b->degree_total;
  });

  int max_deg = 1;
  double max_imp = 1e-9;
  for (const auto* r : sorted) {
    max_deg = std::max(max_deg, r->degree_total);
    max_imp = std::max(max_imp, std::abs(r->impact));
  }

  std::ostringstream out;
  out << svg_open(W, H);
  out << text_at(W / 2.0, 20, title, 13, "middle");
  out << text_at(14, mt - 10, "degree", 11);
  out << text_at(W - mr + 8, mt - 10, "impact", 11);

  const double n = double(sorted.size());
  for (size_t i = 0; i < sorted.size(); ++i) {
    const double x = ml + (n > 1 ? pw * double(i) / (n - 1) : pw / 2.0);
    const double hdeg = ph * double(sorted[i]->degree_total) / max_deg;
    out << "<rect x=\"" << format_double(x - 1.0, 2) << "\" y=\""
        << format_double(mt + ph - hdeg, 2) << "\" width=\"2\" height=\""
        << format_double(hdeg, 2) << "\" fill=\"#9ecae1\"/>\n";
  }
  for (size_t i = 0; i < sorted.size(); ++i) {
    const double x = ml + (n > 1 ? pw * double(i) / (n - 1) : pw / 2.0);
    const double y = mt + ph - ph * std::max(0.0, sorted[i]->impact) / max_imp;
    out << "<circle cx=\"" << format_double(x, 2) << "\" cy=\"" << format_double(y, 2)
        << "\" r=\"2.2\" fill=\"#d62728\"/>\n";
  }

  // axes and scale labels
  out << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << W - mr << "\" y2=\""
      << mt + ph << "\" stroke=\"black\"/>\n";
  out << text_at(ml, H - 16, "entities, sorted by total degree", 11);
  out << text_at(ml - 8, mt + 10, std::to_string(max_deg), 10, "end");
  out << text_at(ml - 8, mt + ph, "0", 10, "end");
  {
    std::ostringstream imax;
    imax << format_double(max_imp, 4);
    out << text_at(W - mr + 8, mt + 10, imax.str(), 10);
    out << text_at(W - mr + 8, mt + ph, "0", 10);
  }
  out << "</svg>\n";
  return out.str();
}

std::string pca_scatter_svg(const PcaResult& p, int group_size, int highlighted_groups,
                            const std::string& title) {
  require(p.k >= 2, errc::validation, "pca scatter needs two components");
  const int W = 520, H = 520, margin = 40;
  double lo = 0, hi = 0;
  for (double c : p.coords) {
    lo = std::min(lo, c);
    hi = std::max(hi, c);
  }
  const double span = std::max(hi - lo, 1e-9);
  auto sx = [&](double v) { return margin + (W - 2 * margin) * (v - lo) / span; };
  auto sy = [&](double v) { return H - margin - (H - 2 * margin) * (v - lo) / span; };

  std::ostringstream out;
  out << svg_open(W, H);
  out << text_at(W / 2.0, 20, title, 13, "middle");
  for (int i = 0; i < p.n; ++i) {
    const int group = i / group_size;
    const bool hot = group < highlighted_groups;
    const std::string color = hot ? kPalette[group % 6] : "#c8c8c8";
    out << "<circle cx=\"" << format_double(sx(p.coords[size_t(i) * p.k]), 2) << "\" cy=\""
        << format_double(sy(p.coords[size_t(i) * p.k + 1]), 2) << "\" r=\""
        << (hot ? "3.5" : "2") << "\" fill=\"" << color << "\" fill-opacity=\""
        << (hot ? "0.95" : "0.5") << "\"/>\n";
  }
  out << text_at(W / 2.0, H - 10, "PC1", 11, "middle");
  out << text_at(14, H / 2.0, "PC2", 11);
  out << "</svg>\n";
  return out.str();
}

std::string trace_heatmap_svg(const TraceGrid& grid, const std::string& title) {
  const int cell_w = 46, cell_h = 46, ml = 110, mt = 60;
  const int W = ml + cell_w * grid.n_layers + 30;
  const int H = mt + cell_h * grid.seq_len + 40;

  double max_dp = 1e-9;
  for (int pos = 0; pos < grid.seq_len; ++pos)
    for (int l = 0; l < grid.n_layers; ++l)
      max_dp = std::max(max_dp, std::abs(grid.cell(pos, l, Site::ffn)));

  std::ostringstream out;
  out << svg_open(W, H);
  out << text_at(W / 2.0, 22, title, 13, "middle");
  out << text_at(W / 2.0, 40, "FFN restoration gain (delta p), max |value| = " +
                                  format_double(max_dp, 4),
                 10, "middle");
  const char* row_label[2] = {"subject", "relation"};
  for (int pos = 0; pos < grid.seq_len; ++pos) {
    out << text_at(ml - 10, mt + pos * cell_h + cell_h / 2.0 + 4,
                   pos < 2 ? row_label[pos] : std::to_string(pos), 11, "end");
    for (int l = 0; l < grid.n_layers; ++l) {
      const double v = grid.cell(pos, l, Site::ffn);
      const double unit = std::clamp(v / max_dp, -1.0, 1.0);
      // blue-white-red: positive gains darken toward blue, like Fig.-6 bands
      int r, g, b;
      if (unit >= 0) {
        r = int(255 - 205 * unit);
        g = int(255 - 155 * unit);
        b = 255;
      } else {
        r = 255;
        g = int(255 + 155 * unit);
        b = int(255 + 205 * unit);
      }
      std::ostringstream color;
      color << "rgb(" << r << ',' << g << ',' << b << ')';
      out << "<rect x=\"" << ml + l * cell_w << "\" y=\"" << mt + pos * cell_h << "\" width=\""
          << cell_w - 2 << "\" height=\"" << cell_h - 2 << "\" fill=\"" << color.str()
          << "\" stroke=\"#888\"/>\n";
    }
  }
  for (int l = 0; l < grid.n_layers; ++l)
    out << text_at(ml + l * cell_w + cell_w / 2.0 - 1, mt + grid.seq_len * cell_h + 16,
                   std::to_string(l), 10, "middle");
  out << text_at(ml + grid.n_layers * cell_w / 2.0, H - 8, "layer", 11, "middle");
  out << "</svg>\n";
  return out.str();
}

}  // namespace ulab
