#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "peerfx/types.hpp"

namespace peerfx {

// Dataset CSV: header `id,group_id[,group2_id][,true_group_size],y,x1[,...]`.
// Lines starting with '#' are provenance comments and are skipped. Optional
// cells may be empty.
Dataset read_dataset_csv(std::istream& is);
Dataset read_dataset_csv_file(const std::string& path);
void write_dataset_csv(const Dataset& data, std::ostream& os,
                       const std::string& provenance = "");

// Two-column `size,count` CSV (header optional) used by the deconvolution
// command. Returns counts indexed by size starting at 1.
std::vector<long> read_size_counts_csv(std::istream& is);
std::vector<long> read_size_counts_csv_file(const std::string& path);

}  // namespace peerfx
