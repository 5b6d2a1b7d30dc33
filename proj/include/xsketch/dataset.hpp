#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xsketch/notedata.hpp"
#include "xsketch/regularizers.hpp"

// Prepared training data: excerpt windows with materialized features and the
// cached planning/structure signals. On disk a dataset directory holds
// features.csv (the spec feature dump), excerpts.csv, signals.csv and
// meta.json.
namespace xsketch::dataset {

struct PreparedExcerpt {
    std::string piece_id;
    int excerpt_index = 0;
    Mat x;               // N x 3
    Eigen::MatrixXi y;   // N x 8
    std::vector<int> sizes;
    Mat k;               // C x 3
    Mat i_pln, i_str;    // C x 3 cached signals

    int note_count() const { return static_cast<int>(x.rows()); }
    int chord_count() const { return static_cast<int>(sizes.size()); }
};

struct Dataset {
    std::vector<PreparedExcerpt> excerpts;
    int degree = 4;
};

inline PreparedExcerpt prepare_excerpt(const notedata::PieceFeatures& f,
                                       const notedata::Excerpt& e, int degree) {
    PreparedExcerpt out;
    out.piece_id = e.piece_id;
    out.excerpt_index = e.index;
    out.x = notedata::excerpt_x(f, e);
    out.y = notedata::excerpt_y(f, e);
    out.sizes = notedata::excerpt_sizes(f, e);
    out.k = notedata::excerpt_k(f, e);
    auto sig = regularizers::fit_planning_signal(out.k, degree);
    out.i_pln = sig.values;
    out.i_str = regularizers::structure_signal(out.k, out.i_pln);
    return out;
}

inline Dataset prepare_dataset(const std::vector<notedata::AlignedPiece>& pieces, int degree) {
    Dataset d;
    d.degree = degree;
    for (const auto& piece : pieces) {
        const auto f = notedata::extract_features(piece);
        for (const auto& e : notedata::slice_excerpts(f))
            d.excerpts.push_back(prepare_excerpt(f, e, degree));
    }
    return d;
}

// rebuild an excerpt on the singleton partition: every note its own chord,
// signals refit over note positions (notewise/cvae architectures)
inline PreparedExcerpt to_singletons(const PreparedExcerpt& e, int degree) {
    PreparedExcerpt out = e;
    out.sizes.assign(static_cast<size_t>(e.note_count()), 1);
    out.k = e.x;
    auto sig = regularizers::fit_planning_signal(out.k, degree);
    out.i_pln = sig.values;
    out.i_str = regularizers::structure_signal(out.k, out.i_pln);
    return out;
}

inline Dataset to_singletons(const Dataset& d) {
    Dataset out;
    out.degree = d.degree;
    out.excerpts.reserve(d.excerpts.size());
    for (const auto& e : d.excerpts) out.excerpts.push_back(to_singletons(e, d.degree));
    return out;
}

// ---- on-disk layout ---------------------------------------------------------

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}
}  // namespace detail

inline void write_dataset(const std::string& dir,
                          const std::vector<notedata::PieceFeatures>& pieces, int degree) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    {
        std::ofstream f(dir + "/features.csv");
        if (!f) throw DataError("cannot write " + dir + "/features.csv");
        notedata::write_features_csv(f, pieces);
    }

    std::ofstream ex(dir + "/excerpts.csv");
    std::ofstream sg(dir + "/signals.csv");
    if (!ex || !sg) throw DataError("cannot write excerpt/signal files in " + dir);
    ex << "piece_id,excerpt_idx,chord_begin,chord_end,note_begin,note_end\n";
    sg << "piece_id,excerpt_idx,chord_idx,I_pln_v,I_pln_t,I_pln_a,I_str_v,I_str_t,I_str_a\n";
    sg.precision(17);

    int total = 0;
    for (const auto& f : pieces) {
        for (const auto& e : notedata::slice_excerpts(f)) {
            ex << e.piece_id << "," << e.index << "," << e.chord_begin << "," << e.chord_end << ","
               << e.note_begin << "," << e.note_end << "\n";
            const auto pe = prepare_excerpt(f, e, degree);
            for (int c = 0; c < pe.chord_count(); ++c) {
                sg << e.piece_id << "," << e.index << "," << (e.chord_begin + c);
                for (int a = 0; a < kNumAttrs; ++a) sg << "," << pe.i_pln(c, a);
                for (int a = 0; a < kNumAttrs; ++a) sg << "," << pe.i_str(c, a);
                sg << "\n";
            }
            ++total;
        }
    }

    nlohmann::json meta{{"degree", degree},
                        {"pieces", pieces.size()},
                        {"excerpts", total},
                        {"format", "xsketch-dataset-v1"}};
    std::ofstream mf(dir + "/meta.json");
    mf << meta.dump(2) << "\n";
}

inline Dataset read_dataset(const std::string& dir) {
    std::ifstream mf(dir + "/meta.json");
    if (!mf) throw DataError("cannot open " + dir + "/meta.json");
    nlohmann::json meta = nlohmann::json::parse(mf);
    Dataset d;
    d.degree = meta.at("degree").get<int>();

    // per-piece features, rebuilt from the dump
    struct PieceRows {
        std::vector<int> chord_of;
        std::vector<std::array<double, 3>> x;
        std::vector<std::array<int, notedata::kScoreFeatureCount>> y;
    };
    std::map<std::string, PieceRows> rows;
    std::vector<std::string> piece_order;
    {
        std::ifstream f(dir + "/features.csv");
        if (!f) throw DataError("cannot open " + dir + "/features.csv");
        std::string line;
        std::getline(f, line);  // header
        int line_no = 1;
        while (std::getline(f, line)) {
            ++line_no;
            if (line.empty()) continue;
            const auto cells = detail::split_csv_line(line);
            if (cells.size() != 6 + notedata::kScoreFeatureCount)
                throw DataError(dir + "/features.csv line " + std::to_string(line_no) +
                                ": wrong column count");
            auto& pr = rows[cells[0]];
            if (pr.x.empty()) piece_order.push_back(cells[0]);
            pr.chord_of.push_back(std::stoi(cells[2]));
            pr.x.push_back({std::stod(cells[3]), std::stod(cells[4]), std::stod(cells[5])});
            std::array<int, notedata::kScoreFeatureCount> yr{};
            for (int c = 0; c < notedata::kScoreFeatureCount; ++c) yr[c] = std::stoi(cells[6 + c]);
            pr.y.push_back(yr);
        }
    }

    struct ExRange {
        std::string piece_id;
        int index, chord_begin, chord_end, note_begin, note_end;
    };
    std::vector<ExRange> ranges;
    {
        std::ifstream f(dir + "/excerpts.csv");
        if (!f) throw DataError("cannot open " + dir + "/excerpts.csv");
        std::string line;
        std::getline(f, line);
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            const auto c = detail::split_csv_line(line);
            ranges.push_back({c[0], std::stoi(c[1]), std::stoi(c[2]), std::stoi(c[3]),
                              std::stoi(c[4]), std::stoi(c[5])});
        }
    }

    // signals keyed by (piece, excerpt, chord)
    std::map<std::pair<std::string, int>, std::map<int, std::array<double, 6>>> signals;
    {
        std::ifstream f(dir + "/signals.csv");
        if (!f) throw DataError("cannot open " + dir + "/signals.csv");
        std::string line;
        std::getline(f, line);
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            const auto c = detail::split_csv_line(line);
            std::array<double, 6> v{};
            for (int i = 0; i < 6; ++i) v[i] = std::stod(c[3 + i]);
            signals[{c[0], std::stoi(c[1])}][std::stoi(c[2])] = v;
        }
    }

    for (const auto& r : ranges) {
        const auto& pr = rows.at(r.piece_id);
        PreparedExcerpt e;
        e.piece_id = r.piece_id;
        e.excerpt_index = r.index;
        const int n = r.note_end - r.note_begin;
        e.x.resize(n, 3);
        e.y.resize(n, notedata::kScoreFeatureCount);
        e.sizes.assign(static_cast<size_t>(r.chord_end - r.chord_begin), 0);
        for (int i = 0; i < n; ++i) {
            const int g = r.note_begin + i;
            for (int a = 0; a < 3; ++a) e.x(i, a) = pr.x[g][a];
            for (int c = 0; c < notedata::kScoreFeatureCount; ++c) e.y(i, c) = pr.y[g][c];
            e.sizes[pr.chord_of[g] - r.chord_begin]++;
        }
        e.k = hier::segment_mean(e.x, e.sizes);
        const auto& sig = signals.at({r.piece_id, r.index});
        e.i_pln.resize(e.chord_count(), 3);
        e.i_str.resize(e.chord_count(), 3);
        for (int c = 0; c < e.chord_count(); ++c) {
            const auto& v = sig.at(r.chord_begin + c);
            for (int a = 0; a < 3; ++a) {
                e.i_pln(c, a) = v[a];
                e.i_str(c, a) = v[3 + a];
            }
        }
        d.excerpts.push_back(std::move(e));
    }
    return d;
}

}  // namespace xsketch::dataset
