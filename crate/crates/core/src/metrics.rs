//! Per-category accuracy tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::synthetic::{Category, QuestionType, Scope};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub scope: Scope,
    pub question_type: QuestionType,
    pub n: usize,
    pub correct: usize,
}

impl MetricsRow {
    pub fn accuracy(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.correct as f64 / self.n as f64
        }
    }
}

/// Rows in category order. Averages are always recomputed from the rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = (Category, bool)>) -> Self {
        let mut tally: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
        for (cat, ok) in outcomes {
            let e = tally.entry(cat).or_default();
            e.0 += 1;
            e.1 += ok as usize;
        }
        let rows = tally
            .into_iter()
            .map(|(c, (n, correct))| MetricsRow {
                scope: c.scope,
                question_type: c.qtype,
                n,
                correct,
            })
            .collect();
        Self { rows }
    }

    /// Unweighted mean of the scope's row accuracies.
    pub fn scope_average(&self, scope: Scope) -> Option<f64> {
        let accs: Vec<f64> = self.rows.iter().filter(|r| r.scope == scope && r.n > 0).map(MetricsRow::accuracy).collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }

    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.n).sum()
    }

    /// Sample-weighted accuracy over every row.
    pub fn overall(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            return 0.0;
        }
        self.rows.iter().map(|r| r.correct).sum::<usize>() as f64 / n as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("scope\tquestion_type\tn\taccuracy\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.4}", r.scope, r.question_type, r.n, r.accuracy());
        }
        for scope in [Scope::A, Scope::V, Scope::AV] {
            if let Some(avg) = self.scope_average(scope) {
                let n: usize = self.rows.iter().filter(|r| r.scope == scope).map(|r| r.n).sum();
                let _ = writeln!(out, "{scope}\tavg\t{n}\t{avg:.4}");
            }
        }
        let _ = writeln!(out, "all\tavg\t{}\t{:.4}", self.total(), self.overall());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(scope: Scope, qtype: QuestionType) -> Category {
        Category { scope, qtype }
    }

    #[test]
    fn recount_matches_rows() {
        let outcomes = vec![
            (cat(Scope::A, QuestionType::Exist), true),
            (cat(Scope::A, QuestionType::Exist), false),
            (cat(Scope::A, QuestionType::Count), true),
            (cat(Scope::AV, QuestionType::Temporal), true),
        ];
        let t = MetricsTable::from_outcomes(outcomes);
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0].accuracy(), 0.5);
        assert_eq!(t.scope_average(Scope::A), Some(0.75));
        assert_eq!(t.scope_average(Scope::V), None);
        assert_eq!(t.overall(), 0.75);
    }

    #[test]
    fn tsv_layout() {
        let t = MetricsTable::from_outcomes(vec![(cat(Scope::V, QuestionType::Count), true)]);
        assert_eq!(
            t.to_tsv(),
            "scope\tquestion_type\tn\taccuracy\nV\tcount\t1\t1.0000\nV\tavg\t1\t1.0000\nall\tavg\t1\t1.0000\n"
        );
    }
}
