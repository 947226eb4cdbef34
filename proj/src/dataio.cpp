#include "ewclab/dataio.hpp"

#include "json.hpp"

#include "ewclab/error.hpp"

namespace ewclab {
namespace {

using nlohmann::json;

json seq_json(const TokenSeq& s) {
    return {{"ids", s.ids}, {"mask_positions", s.mask_positions}, {"targets", s.target_ids}};
}

TokenSeq seq_from(const json& j) {
    TokenSeq s;
    s.ids = j.at("ids").get<std::vector<int>>();
    s.mask_positions = j.at("mask_positions").get<std::vector<std::size_t>>();
    s.target_ids = j.at("targets").get<std::vector<int>>();
    s.validate();
    return s;
}

// Calls fn(json, line number) for every nonblank line.
template <class Fn>
void for_each_line(std::string_view text, Fn fn) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        try {
            fn(json::parse(line));
        } catch (const json::exception& e) {
            fail(ErrorKind::InvalidInput, "line " + std::to_string(line_no) + ": " + e.what());
        } catch (const Error& e) {
            fail(e.kind(), "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
}

} // namespace

std::string dataset_jsonl(const std::vector<ArithInstance>& data) {
    std::string out;
    for (const auto& d : data) {
        json j = seq_json(d.seq);
        j["a"] = d.a;
        j["op"] = d.op == Op::Add ? "+" : "-";
        j["b"] = d.b;
        j["result"] = d.result;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<ArithInstance> parse_dataset_jsonl(std::string_view text) {
    std::vector<ArithInstance> out;
    for_each_line(text, [&](const json& j) {
        const auto op = j.at("op").get<std::string>();
        if (op != "+" && op != "-") fail(ErrorKind::InvalidInput, "op must be \"+\" or \"-\"");
        ArithInstance d;
        d.a = j.at("a").get<std::int64_t>();
        d.op = op == "+" ? Op::Add : Op::Sub;
        d.b = j.at("b").get<std::int64_t>();
        d.result = j.at("result").get<std::int64_t>();
        d.seq = seq_from(j);
        if (d.result != (d.op == Op::Add ? d.a + d.b : d.a - d.b)) fail(ErrorKind::InvalidInput, "result disagrees with operands");
        out.push_back(std::move(d));
    });
    return out;
}

std::string corpus_jsonl(const std::vector<TokenSeq>& corpus) {
    std::string out;
    for (const auto& s : corpus) {
        out += seq_json(s).dump();
        out += '\n';
    }
    return out;
}

std::vector<TokenSeq> parse_corpus_jsonl(std::string_view text) {
    std::vector<TokenSeq> out;
    for_each_line(text, [&](const json& j) { out.push_back(seq_from(j)); });
    return out;
}

} // namespace ewclab
