#include "peerfx/csv.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace peerfx {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cell);
            cell.clear();
        } else if (c != '\r') {
            cell.push_back(c);
        }
    }
    out.push_back(cell);
    return out;
}

bool next_content_line(std::istream& is, std::string& line) {
    while (std::getline(is, line)) {
        if (line.empty() || line.front() == '#') continue;
        return true;
    }
    return false;
}

long parse_long(const std::string& s, const std::string& what) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw DataError("csv: bad " + what + " value '" + s + "'");
    }
    return v;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("csv: bad " + what + " value '" + s + "'");
    }
}

}  // namespace

Dataset read_dataset_csv(std::istream& is) {
    std::string line;
    if (!next_content_line(is, line)) throw DataError("csv: empty dataset file");
    const std::vector<std::string> header = split_line(line);

    int col_id = -1, col_group = -1, col_group2 = -1, col_size = -1, col_y = -1;
    std::vector<std::pair<int, int>> x_cols;  // (column index, covariate index)
    for (int i = 0; i < static_cast<int>(header.size()); ++i) {
        const std::string& h = header[static_cast<std::size_t>(i)];
        if (h == "id") {
            col_id = i;
        } else if (h == "group_id") {
            col_group = i;
        } else if (h == "group2_id") {
            col_group2 = i;
        } else if (h == "true_group_size") {
            col_size = i;
        } else if (h == "y") {
            col_y = i;
        } else if (h.size() > 1 && h.front() == 'x') {
            const long k = parse_long(h.substr(1), "covariate header");
            x_cols.emplace_back(i, static_cast<int>(k) - 1);
        } else {
            throw DataError("csv: unknown column '" + h + "'");
        }
    }
    if (col_id < 0 || col_group < 0 || col_y < 0 || x_cols.empty()) {
        throw DataError("csv: header must contain id, group_id, y and at least x1");
    }
    const int k = static_cast<int>(x_cols.size());
    for (const auto& [col, xi] : x_cols) {
        if (xi < 0 || xi >= k) throw DataError("csv: covariate columns must be x1..xK");
    }

    Dataset data;
    while (next_content_line(is, line)) {
        const std::vector<std::string> cells = split_line(line);
        if (cells.size() != header.size()) {
            throw DataError("csv: row with " + std::to_string(cells.size()) +
                            " cells but header has " + std::to_string(header.size()));
        }
        Row row;
        row.id = parse_long(cells[static_cast<std::size_t>(col_id)], "id");
        row.group_id = parse_long(cells[static_cast<std::size_t>(col_group)], "group_id");
        if (col_group2 >= 0 && !cells[static_cast<std::size_t>(col_group2)].empty()) {
            row.group2_id = parse_long(cells[static_cast<std::size_t>(col_group2)], "group2_id");
        }
        if (col_size >= 0 && !cells[static_cast<std::size_t>(col_size)].empty()) {
            row.true_group_size =
                parse_long(cells[static_cast<std::size_t>(col_size)], "true_group_size");
        }
        row.y = parse_double(cells[static_cast<std::size_t>(col_y)], "y");
        row.x.assign(static_cast<std::size_t>(k), 0.0);
        for (const auto& [col, xi] : x_cols) {
            row.x[static_cast<std::size_t>(xi)] =
                parse_double(cells[static_cast<std::size_t>(col)], header[static_cast<std::size_t>(col)]);
        }
        data.rows.push_back(std::move(row));
    }
    data.validate();
    return data;
}

Dataset read_dataset_csv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open data file '" + path + "'");
    return read_dataset_csv(is);
}

void write_dataset_csv(const Dataset& data, std::ostream& os, const std::string& provenance) {
    if (!provenance.empty()) os << "# " << provenance << '\n';
    const bool g2 = data.has_group2();
    const bool ts = data.has_true_sizes();
    const int k = data.K();
    os << "id,group_id";
    if (g2) os << ",group2_id";
    if (ts) os << ",true_group_size";
    os << ",y";
    for (int i = 1; i <= k; ++i) os << ",x" << i;
    os << '\n';
    os.precision(17);
    for (const auto& row : data.rows) {
        os << row.id << ',' << row.group_id;
        if (g2) {
            os << ',';
            if (row.group2_id) os << *row.group2_id;
        }
        if (ts) {
            os << ',';
            if (row.true_group_size) os << *row.true_group_size;
        }
        os << ',' << row.y;
        for (double v : row.x) os << ',' << v;
        os << '\n';
    }
}

std::vector<long> read_size_counts_csv(std::istream& is) {
    std::vector<long> counts;
    std::string line;
    bool first = true;
    while (next_content_line(is, line)) {
        const std::vector<std::string> cells = split_line(line);
        if (cells.size() != 2) throw DataError("size csv: expected two columns (size,count)");
        if (first && (cells[0] == "size" || cells[0] == "n")) {
            first = false;
            continue;
        }
        first = false;
        const long size = parse_long(cells[0], "size");
        const long count = parse_long(cells[1], "count");
        if (size < 1) throw DataError("size csv: sizes must be >= 1");
        if (count < 0) throw DataError("size csv: counts must be >= 0");
        if (static_cast<long>(counts.size()) < size) counts.resize(static_cast<std::size_t>(size), 0);
        counts[static_cast<std::size_t>(size - 1)] += count;
    }
    if (counts.empty()) throw DataError("size csv: no rows");
    return counts;
}

std::vector<long> read_size_counts_csv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open data file '" + path + "'");
    return read_size_counts_csv(is);
}

}  // namespace peerfx
