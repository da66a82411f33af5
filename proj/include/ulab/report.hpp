#pragma once

#include <span>
#include <string>

#include "ulab/analysis.hpp"
#include "ulab/tracing.hpp"

namespace ulab {

// impact.csv: one row per swept subject, ascending subject id.
std::string impact_csv(std::span<const ImpactRecord> records);
std::vector<ImpactRecord> impact_csv_parse(const std::string& text);

// efficacy.csv: subject,efficacy companion table for the sweep.
std::string efficacy_csv(std::span<const ImpactRecord> records);

// pca_{entities,relations}.csv: name,pc1,pc2,entity_id
std::string pca_csv(const PcaResult& pca, const NameTable& names, NameFamily family);

// Dual-axis bar/point chart of degree and deletion impact per entity,
// entities ordered by descending degree.
std::string degree_impact_svg(std::span<const ImpactRecord> records, const std::string& title);

// PC1/PC2 scatter with the first few items' paraphrase groups highlighted.
std::string pca_scatter_svg(const PcaResult& pca, int group_size, int highlighted_groups,
                            const std::string& title);

// Layers x positions heatmap of FFN-site restoration gains.
std::string trace_heatmap_svg(const TraceGrid& grid, const std::string& title);

}  // namespace ulab
