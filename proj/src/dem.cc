// Copyright 2026 Demfit Contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "demfit/dem.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "demfit/rng.h"

namespace demfit {

namespace {

double clamp_prob(double p) {
    return std::min(kMaxMechanismProb, std::max(kMinMechanismProb, p));
}

// Probability that an odd number of two independent events fire.
double xor_merge(double p1, double p2) {
    return p1 * (1 - p2) + p2 * (1 - p1);
}

// Shortest decimal form that parses back to the exact same double, up to
// the 17 significant digits doubles need.
std::string format_prob(double p) {
    char buf[64];
    for (int digits = 15; digits <= 17; digits++) {
        std::snprintf(buf, sizeof buf, "%.*g", digits, p);
        if (std::stod(buf) == p) {
            break;
        }
    }
    return buf;
}

std::string format_coord(double c) {
    if (c == std::floor(c) && std::abs(c) < 1e15) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%" PRId64, static_cast<int64_t>(c));
        return buf;
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", c);
    return buf;
}

}  // namespace

std::vector<double> DetectorErrorModel::priors() const {
    std::vector<double> theta(mechanisms.size());
    for (size_t i = 0; i < mechanisms.size(); i++) {
        theta[i] = mechanisms[i].prob;
    }
    return theta;
}

void DetectorErrorModel::set_priors(const std::vector<double> &theta) {
    if (theta.size() != mechanisms.size()) {
        throw std::invalid_argument("prior vector length does not match mechanism count");
    }
    for (size_t i = 0; i < mechanisms.size(); i++) {
        mechanisms[i].prob = clamp_prob(theta[i]);
    }
}

bool DetectorErrorModel::is_graphlike() const {
    for (const auto &mech : mechanisms) {
        if (mech.detectors.size() > 2) {
            return false;
        }
    }
    return true;
}

double DetectorErrorModel::detector_round(size_t detector) const {
    if (detector >= detector_coords.size() || detector_coords[detector].empty()) {
        throw std::runtime_error(
            "detector D" + std::to_string(detector) + " has no coordinates");
    }
    return detector_coords[detector].back();
}

void DetectorErrorModel::canonicalize(std::vector<std::string> *warnings) {
    std::vector<ErrorMechanism> kept;
    kept.reserve(mechanisms.size());
    // Key: detector list + logical flag -> index into kept.
    std::map<std::pair<std::vector<uint32_t>, bool>, size_t> seen;
    for (auto &mech : mechanisms) {
        std::sort(mech.detectors.begin(), mech.detectors.end());
        // A detector listed twice cancels out.
        std::vector<uint32_t> dets;
        for (uint32_t d : mech.detectors) {
            if (!dets.empty() && dets.back() == d) {
                dets.pop_back();
            } else {
                dets.push_back(d);
            }
        }
        mech.detectors = std::move(dets);
        for (uint32_t d : mech.detectors) {
            if (d >= n_detectors) {
                n_detectors = d + 1;
            }
        }
        if (mech.detectors.empty() && !mech.flips_logical) {
            if (warnings) {
                warnings->push_back("dropped mechanism that touches no detector and no observable");
            }
            continue;
        }
        mech.prob = clamp_prob(mech.prob);
        auto key = std::make_pair(mech.detectors, mech.flips_logical);
        auto it = seen.find(key);
        if (it != seen.end()) {
            kept[it->second].prob = clamp_prob(xor_merge(kept[it->second].prob, mech.prob));
        } else {
            seen.emplace(std::move(key), kept.size());
            kept.push_back(std::move(mech));
        }
    }
    mechanisms = std::move(kept);
    if (!detector_coords.empty() && detector_coords.size() < n_detectors) {
        detector_coords.resize(n_detectors);
    }
}

void ShotBatch::append(const BitVec &syndrome) {
    if (syndrome.n != n_detectors) {
        throw std::invalid_argument("syndrome width does not match batch");
    }
    words.insert(words.end(), syndrome.words.begin(), syndrome.words.end());
    n_shots++;
}

BitVec ShotBatch::row(size_t shot) const {
    BitVec out(n_detectors);
    size_t wps = words_per_shot();
    std::copy(words.begin() + shot * wps, words.begin() + (shot + 1) * wps, out.words.begin());
    return out;
}

// ---- Parser ----------------------------------------------------------------

namespace {

struct ParseCursor {
    std::string_view text;
    size_t pos = 0;
    size_t line = 1;

    bool eof() const {
        return pos >= text.size();
    }
    char peek() const {
        return text[pos];
    }
    void skip_spaces() {
        while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\r')) {
            pos++;
        }
    }
    [[noreturn]] void fail(const std::string &msg) const {
        throw std::runtime_error("DEM parse error at line " + std::to_string(line) + ": " + msg);
    }
};

struct ParseState {
    DetectorErrorModel model;
    std::vector<std::string> *warnings;
    int64_t detector_offset = 0;
    std::vector<double> coord_offset;
    std::vector<bool> declared;

    void note_detector(size_t index) {
        if (index >= declared.size()) {
            declared.resize(index + 1, false);
        }
        declared[index] = true;
    }
    void warn(const std::string &msg) {
        if (warnings) {
            warnings->push_back(msg);
        }
    }
};

std::string next_token(ParseCursor &cur) {
    cur.skip_spaces();
    size_t start = cur.pos;
    while (!cur.eof()) {
        char c = cur.peek();
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '{' || c == '}' || c == '#') {
            break;
        }
        cur.pos++;
    }
    return std::string(cur.text.substr(start, cur.pos - start));
}

double parse_double_or_fail(ParseCursor &cur, const std::string &tok, const char *what) {
    try {
        size_t used = 0;
        double v = std::stod(tok, &used);
        if (used != tok.size()) {
            cur.fail(std::string("bad ") + what + " '" + tok + "'");
        }
        return v;
    } catch (const std::invalid_argument &) {
        cur.fail(std::string("bad ") + what + " '" + tok + "'");
    } catch (const std::out_of_range &) {
        cur.fail(std::string(what) + " out of range: '" + tok + "'");
    }
}

// Splits "name(a,b,c)" into name and arguments. Returns false if there is no
// parenthesized list.
bool split_args(const std::string &tok, std::string *name, std::vector<std::string> *args) {
    size_t open = tok.find('(');
    if (open == std::string::npos) {
        *name = tok;
        return false;
    }
    if (tok.back() != ')') {
        return false;
    }
    *name = tok.substr(0, open);
    std::string body = tok.substr(open + 1, tok.size() - open - 2);
    size_t start = 0;
    while (start <= body.size()) {
        size_t comma = body.find(',', start);
        if (comma == std::string::npos) {
            if (!body.empty()) {
                args->push_back(body.substr(start));
            }
            break;
        }
        args->push_back(body.substr(start, comma - start));
        start = comma + 1;
    }
    return true;
}

void parse_block(ParseCursor &cur, ParseState &st, bool inside_repeat);

void parse_instruction(ParseCursor &cur, ParseState &st, const std::string &first_tok) {
    std::string name;
    std::vector<std::string> arg_toks;
    split_args(first_tok, &name, &arg_toks);

    if (name == "error") {
        if (arg_toks.size() != 1) {
            cur.fail("error takes exactly one probability argument");
        }
        double p = parse_double_or_fail(cur, arg_toks[0], "probability");
        if (p == 0.0) {
            // Consume targets, then drop the line.
            while (!next_token(cur).empty()) {
            }
            st.warn("dropped zero-probability error instruction at line " + std::to_string(cur.line));
            return;
        }
        if (p < 0.0 || p >= 1.0) {
            cur.fail("probability out of range (0,1): " + arg_toks[0]);
        }
        ErrorMechanism mech;
        mech.prob = p;
        while (true) {
            std::string tok = next_token(cur);
            if (tok.empty()) {
                break;
            }
            if (tok[0] == 'D') {
                int64_t idx = 0;
                auto res = std::from_chars(tok.data() + 1, tok.data() + tok.size(), idx);
                if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
                    cur.fail("bad detector target '" + tok + "'");
                }
                idx += st.detector_offset;
                if (idx < 0) {
                    cur.fail("negative detector index after shift");
                }
                mech.detectors.push_back(static_cast<uint32_t>(idx));
                st.note_detector(static_cast<size_t>(idx));
            } else if (tok[0] == 'L') {
                if (tok != "L0") {
                    cur.fail("only logical observable L0 is supported, got '" + tok + "'");
                }
                mech.flips_logical = !mech.flips_logical;
            } else {
                cur.fail("unexpected error target '" + tok + "'");
            }
        }
        st.model.mechanisms.push_back(std::move(mech));
    } else if (name == "detector") {
        std::vector<double> coords;
        for (const auto &a : arg_toks) {
            coords.push_back(parse_double_or_fail(cur, a, "coordinate"));
        }
        std::string tok = next_token(cur);
        if (tok.empty() || tok[0] != 'D') {
            cur.fail("detector instruction needs a D<k> target");
        }
        int64_t idx = 0;
        auto res = std::from_chars(tok.data() + 1, tok.data() + tok.size(), idx);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
            cur.fail("bad detector target '" + tok + "'");
        }
        idx += st.detector_offset;
        if (idx < 0) {
            cur.fail("negative detector index after shift");
        }
        size_t index = static_cast<size_t>(idx);
        st.note_detector(index);
        if (!coords.empty()) {
            for (size_t k = 0; k < coords.size() && k < st.coord_offset.size(); k++) {
                coords[k] += st.coord_offset[k];
            }
            if (st.model.detector_coords.size() <= index) {
                st.model.detector_coords.resize(index + 1);
            }
            st.model.detector_coords[index] = coords;
        }
        if (st.model.n_detectors <= index) {
            st.model.n_detectors = index + 1;
        }
    } else if (name == "shift_detectors") {
        std::string tok = next_token(cur);
        if (tok.empty()) {
            cur.fail("shift_detectors needs an integer shift");
        }
        int64_t shift = 0;
        auto res = std::from_chars(tok.data(), tok.data() + tok.size(), shift);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
            cur.fail("bad shift '" + tok + "'");
        }
        st.detector_offset += shift;
        for (size_t k = 0; k < arg_toks.size(); k++) {
            double c = parse_double_or_fail(cur, arg_toks[k], "coordinate shift");
            if (st.coord_offset.size() <= k) {
                st.coord_offset.resize(k + 1, 0.0);
            }
            st.coord_offset[k] += c;
        }
    } else if (name == "logical_observable") {
        std::string tok = next_token(cur);
        if (tok != "L0") {
            cur.fail("only logical observable L0 is supported");
        }
    } else if (name == "repeat") {
        std::string tok = next_token(cur);
        int64_t count = 0;
        auto res = std::from_chars(tok.data(), tok.data() + tok.size(), count);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || count < 0) {
            cur.fail("bad repeat count '" + tok + "'");
        }
        cur.skip_spaces();
        if (cur.eof() || cur.peek() != '{') {
            cur.fail("repeat needs a '{' block");
        }
        cur.pos++;
        size_t body_start = cur.pos;
        size_t body_line = cur.line;
        // Find the matching close brace.
        int depth = 1;
        while (!cur.eof() && depth > 0) {
            char c = cur.text[cur.pos];
            if (c == '{') {
                depth++;
            } else if (c == '}') {
                depth--;
            } else if (c == '\n') {
                cur.line++;
            }
            cur.pos++;
        }
        if (depth != 0) {
            cur.fail("unterminated repeat block");
        }
        std::string_view body = cur.text.substr(body_start, cur.pos - 1 - body_start);
        for (int64_t k = 0; k < count; k++) {
            ParseCursor body_cur{body, 0, body_line};
            parse_block(body_cur, st, true);
        }
    } else {
        cur.fail("unknown instruction '" + name + "'");
    }
}

void parse_block(ParseCursor &cur, ParseState &st, bool inside_repeat) {
    while (!cur.eof()) {
        cur.skip_spaces();
        if (cur.eof()) {
            break;
        }
        char c = cur.peek();
        if (c == '\n') {
            cur.pos++;
            cur.line++;
            continue;
        }
        if (c == '#') {
            size_t eol = cur.text.find('\n', cur.pos);
            std::string comment(cur.text.substr(cur.pos, (eol == std::string_view::npos ? cur.text.size() : eol) - cur.pos));
            // `#!meta key value` comments carry model metadata.
            if (comment.rfind("#!meta ", 0) == 0) {
                std::istringstream ss(comment.substr(7));
                std::string key, value;
                ss >> key;
                std::getline(ss, value);
                size_t first = value.find_first_not_of(' ');
                if (first != std::string::npos) {
                    value = value.substr(first);
                } else {
                    value.clear();
                }
                if (!key.empty()) {
                    st.model.metadata[key] = value;
                }
            }
            cur.pos = (eol == std::string_view::npos) ? cur.text.size() : eol;
            continue;
        }
        if (c == '}') {
            if (inside_repeat) {
                cur.fail("unexpected '}'");
            }
            cur.fail("unmatched '}'");
        }
        std::string tok = next_token(cur);
        if (tok.empty()) {
            cur.fail("unexpected character");
        }
        parse_instruction(cur, st, tok);
    }
}

}  // namespace

DetectorErrorModel parse_dem(std::string_view text, std::vector<std::string> *warnings) {
    ParseCursor cur{text, 0, 1};
    ParseState st;
    st.warnings = warnings;
    parse_block(cur, st, false);
    st.model.canonicalize(warnings);
    if (st.model.n_detectors < st.declared.size()) {
        st.model.n_detectors = st.declared.size();
    }
    // Indices are expected to be dense 0..m-1; gaps are allowed but flagged.
    for (size_t d = 0; d < st.declared.size(); d++) {
        if (!st.declared[d]) {
            if (warnings) {
                warnings->push_back("detector index gap: D" + std::to_string(d) + " is never referenced");
            }
            break;
        }
    }
    if (!st.model.detector_coords.empty()) {
        st.model.detector_coords.resize(st.model.n_detectors);
    }
    return st.model;
}

DetectorErrorModel parse_dem_file(const std::string &path, std::vector<std::string> *warnings) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open DEM file: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_dem(ss.str(), warnings);
}

std::string serialize_dem(const DetectorErrorModel &model) {
    std::ostringstream out;
    for (const auto &[key, value] : model.metadata) {
        out << "#!meta " << key << " " << value << "\n";
    }
    bool has_coords = !model.detector_coords.empty();
    for (size_t d = 0; d < model.n_detectors; d++) {
        out << "detector";
        if (has_coords && !model.detector_coords[d].empty()) {
            out << "(";
            const auto &coords = model.detector_coords[d];
            for (size_t k = 0; k < coords.size(); k++) {
                out << (k ? "," : "") << format_coord(coords[k]);
            }
            out << ")";
        }
        out << " D" << d << "\n";
    }
    bool any_logical = false;
    for (const auto &mech : model.mechanisms) {
        any_logical |= mech.flips_logical;
    }
    if (any_logical) {
        out << "logical_observable L0\n";
    }
    for (const auto &mech : model.mechanisms) {
        out << "error(" << format_prob(mech.prob) << ")";
        for (uint32_t d : mech.detectors) {
            out << " D" << d;
        }
        if (mech.flips_logical) {
            out << " L0";
        }
        out << "\n";
    }
    return out.str();
}

void write_dem_file(const DetectorErrorModel &model, const std::string &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write DEM file: " + path);
    }
    out << serialize_dem(model);
}

SyndromeResult syndrome_of(const DetectorErrorModel &model, const ErrorConfig &e) {
    if (e.n != model.n_mechanisms()) {
        throw std::invalid_argument(
            "error configuration has " + std::to_string(e.n) + " bits, model has " +
            std::to_string(model.n_mechanisms()) + " mechanisms");
    }
    SyndromeResult res;
    res.syndrome = BitVec(model.n_detectors);
    for (size_t i = 0; i < model.mechanisms.size(); i++) {
        if (!e.get(i)) {
            continue;
        }
        for (uint32_t d : model.mechanisms[i].detectors) {
            res.syndrome.flip(d);
        }
        res.logical ^= model.mechanisms[i].flips_logical;
    }
    return res;
}

ShotBatch sample_shots(const DetectorErrorModel &model, size_t n_shots, uint64_t seed, int threads) {
    (void)threads;  // chunk grid is fixed; results never depend on thread count
    ShotBatch batch;
    batch.n_detectors = model.n_detectors;
    batch.n_shots = n_shots;
    size_t wps = batch.words_per_shot();
    batch.words.assign(n_shots * wps, 0);
    BitVec labels(n_shots);

    constexpr size_t kChunk = 1 << 16;
    size_t n_chunks = (n_shots + kChunk - 1) / kChunk;
    for (size_t chunk = 0; chunk < n_chunks; chunk++) {
        size_t begin = chunk * kChunk;
        size_t end = std::min(n_shots, begin + kChunk);
        for (size_t i = 0; i < model.mechanisms.size(); i++) {
            const auto &mech = model.mechanisms[i];
            auto rng = make_rng(derive_seed(seed, chunk, i));
            // Skip-sample the shots where mechanism i fires.
            size_t span = end - begin;
            uint64_t shot = geometric_skip(rng, mech.prob);
            while (shot < span) {
                size_t s = begin + shot;
                for (uint32_t d : mech.detectors) {
                    batch.words[s * wps + (d >> 6)] ^= uint64_t{1} << (d & 63);
                }
                if (mech.flips_logical) {
                    labels.flip(s);
                }
                uint64_t skip = geometric_skip(rng, mech.prob);
                if (skip == UINT64_MAX || shot + 1 + skip <= shot) {
                    break;
                }
                shot += 1 + skip;
            }
        }
    }
    batch.logical_flips = std::move(labels);
    return batch;
}

PureErrorSolver::PureErrorSolver(const DetectorErrorModel &model) {
    std::vector<std::pair<size_t, size_t>> entries;
    for (size_t i = 0; i < model.mechanisms.size(); i++) {
        for (uint32_t d : model.mechanisms[i].detectors) {
            entries.emplace_back(d, i);
        }
    }
    solver_ = std::make_unique<Gf2Solver>(model.n_detectors, model.n_mechanisms(), entries);
}

ErrorConfig PureErrorSolver::solve(const BitVec &syndrome) const {
    return solver_->solve(syndrome);
}

ErrorConfig pure_error(const DetectorErrorModel &model, const BitVec &syndrome) {
    return PureErrorSolver(model).solve(syndrome);
}

// ---- Shot file formats ------------------------------------------------------

ShotFormat parse_shot_format(std::string_view name) {
    if (name == "01") {
        return ShotFormat::kText01;
    }
    if (name == "b8") {
        return ShotFormat::kPackedB8;
    }
    throw std::invalid_argument("unknown shot format '" + std::string(name) + "' (expected 01 or b8)");
}

void write_shots(const ShotBatch &batch, const std::string &path, ShotFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write shots file: " + path);
    }
    size_t m = batch.n_detectors;
    if (format == ShotFormat::kText01) {
        std::string line(m + 1, '0');
        line[m] = '\n';
        for (size_t s = 0; s < batch.n_shots; s++) {
            for (size_t d = 0; d < m; d++) {
                line[d] = batch.get(s, d) ? '1' : '0';
            }
            out.write(line.data(), static_cast<std::streamsize>(line.size()));
        }
    } else {
        size_t bytes = (m + 7) / 8;
        std::vector<char> buf(bytes);
        for (size_t s = 0; s < batch.n_shots; s++) {
            std::fill(buf.begin(), buf.end(), 0);
            for (size_t d = 0; d < m; d++) {
                if (batch.get(s, d)) {
                    buf[d >> 3] |= static_cast<char>(1 << (d & 7));
                }
            }
            out.write(buf.data(), static_cast<std::streamsize>(bytes));
        }
    }
}

ShotBatch read_shots(const std::string &path, ShotFormat format, size_t n_detectors) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open shots file: " + path);
    }
    ShotBatch batch;
    batch.n_detectors = n_detectors;
    if (format == ShotFormat::kText01) {
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            line_no++;
            if (!line.empty() && line.back() == '\r') {
                line.pop_back();
            }
            if (line.empty()) {
                continue;
            }
            if (line.size() != n_detectors) {
                throw std::runtime_error(
                    path + ":" + std::to_string(line_no) + ": expected " +
                    std::to_string(n_detectors) + " characters, got " + std::to_string(line.size()));
            }
            BitVec row(n_detectors);
            for (size_t d = 0; d < n_detectors; d++) {
                if (line[d] == '1') {
                    row.set(d, true);
                } else if (line[d] != '0') {
                    throw std::runtime_error(
                        path + ":" + std::to_string(line_no) + ": invalid character '" +
                        std::string(1, line[d]) + "'");
                }
            }
            batch.append(row);
        }
    } else {
        size_t bytes = (n_detectors + 7) / 8;
        std::vector<char> buf(bytes);
        while (in.read(buf.data(), static_cast<std::streamsize>(bytes)) || in.gcount() > 0) {
            if (static_cast<size_t>(in.gcount()) != bytes) {
                throw std::runtime_error(path + ": truncated b8 record at shot " + std::to_string(batch.n_shots));
            }
            BitVec row(n_detectors);
            for (size_t d = 0; d < n_detectors; d++) {
                if ((buf[d >> 3] >> (d & 7)) & 1) {
                    row.set(d, true);
                }
            }
            batch.append(row);
            if (in.eof()) {
                break;
            }
        }
    }
    return batch;
}

void write_labels(const BitVec &labels, const std::string &path, ShotFormat format) {
    ShotBatch batch;
    batch.n_detectors = 1;
    for (size_t s = 0; s < labels.n; s++) {
        BitVec row(1);
        row.set(0, labels.get(s));
        batch.append(row);
    }
    write_shots(batch, path, format);
}

BitVec read_labels(const std::string &path, ShotFormat format) {
    ShotBatch batch = read_shots(path, format, 1);
    BitVec labels(batch.n_shots);
    for (size_t s = 0; s < batch.n_shots; s++) {
        labels.set(s, batch.get(s, 0));
    }
    return labels;
}

}  // namespace demfit
