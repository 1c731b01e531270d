// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tabopt/common.hpp"

namespace tabopt {

/// RFC-4180 CSV: comma separated, optional double-quote quoting with "" as
/// the escaped quote, '.' decimal separator. Both \n and \r\n line ends are
/// accepted; a trailing newline is not required.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int col_index(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
};

inline CsvTable read_csv(std::istream& is, const std::string& origin = "<stream>") {
    CsvTable table;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool any_field = false;
    bool header_done = false;

    auto end_field = [&] {
        record.push_back(field);
        field.clear();
        any_field = false;
    };
    auto end_record = [&] {
        end_field();
        if (!header_done) {
            table.header = std::move(record);
            header_done = true;
        } else {
            if (record.size() != table.header.size())
                throw IoError(origin + ": row " + std::to_string(table.rows.size() + 2) +
                              " has " + std::to_string(record.size()) + " fields, expected " +
                              std::to_string(table.header.size()));
            table.rows.push_back(std::move(record));
        }
        record = {};
    };

    char ch;
    bool pending_record = false;
    while (is.get(ch)) {
        pending_record = true;
        if (in_quotes) {
            if (ch == '"') {
                if (is.peek() == '"') {
                    is.get();
                    field.push_back('"');
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(ch);
            }
            continue;
        }
        switch (ch) {
            case '"':
                in_quotes = true;
                any_field = true;
                break;
            case ',':
                end_field();
                break;
            case '\r':
                break;
            case '\n':
                end_record();
                pending_record = false;
                break;
            default:
                field.push_back(ch);
                any_field = true;
        }
    }
    if (in_quotes) throw IoError(origin + ": unterminated quoted field");
    if (pending_record && (any_field || !field.empty() || !record.empty())) end_record();
    if (!header_done) throw IoError(origin + ": empty file");
    return table;
}

inline CsvTable read_csv_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    return read_csv(is, path);
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += '"';
    return out;
}

inline void write_csv(std::ostream& os, const CsvTable& table) {
    auto write_row = [&os](const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) os << ',';
            os << csv_escape(row[i]);
        }
        os << '\n';
    };
    write_row(table.header);
    for (const auto& row : table.rows) write_row(row);
}

/// Strict double parser; the whole field must be consumed.
inline double parse_numeric(const std::string& s, const std::string& context) {
    if (s.empty()) throw IoError("empty numeric field in " + context);
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw IoError("non-numeric value '" + s + "' in " + context);
    }
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
    if (pos != s.size()) throw IoError("non-numeric value '" + s + "' in " + context);
    return v;
}

}  // namespace tabopt
