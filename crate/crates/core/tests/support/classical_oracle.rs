//! Brute-force classical statistics for the 9 x 5 hand dataset, written
//! without the engine: i1..i3 are 0/1, i4 is multiple choice keyed `B`,
//! i5 is scored 0..2.

pub const HAND_CSV: &str = include_str!("../../../../data/hand_9x5.csv");
pub const GROUPS: usize = 3;
pub const I4_OPTIONS: [&str; 4] = ["A", "B", "C", "NA"];

pub struct Hand {
    pub names: Vec<String>,
    pub raw: Vec<Vec<String>>,
    pub scores: Vec<Vec<f64>>,
    pub max: [f64; 5],
}

pub fn hand() -> Hand {
    let mut lines = HAND_CSV.lines();
    let names = lines.next().unwrap().split(',').map(String::from).collect();
    let raw: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    let scores = raw
        .iter()
        .map(|r| {
            (0..5)
                .map(|i| match i {
                    3 => {
                        if r[3] == "B" {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    _ => r[i].parse().unwrap(),
                })
                .collect()
        })
        .collect();
    Hand {
        names,
        raw,
        scores,
        max: [1.0, 1.0, 1.0, 1.0, 2.0],
    }
}

fn sum(v: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in v {
        s += x;
    }
    s
}

/// Pearson correlation by the raw-sums formula.
fn corr(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sxy: f64 = sum(&x.iter().zip(y).map(|(a, b)| a * b).collect::<Vec<_>>());
    let sxx: f64 = sum(&x.iter().map(|a| a * a).collect::<Vec<_>>());
    let syy: f64 = sum(&y.iter().map(|a| a * a).collect::<Vec<_>>());
    let (sx, sy) = (sum(x), sum(y));
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn var(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sxx: f64 = sum(&x.iter().map(|a| a * a).collect::<Vec<_>>());
    (sxx - sum(x) * sum(x) / n) / (n - 1.0)
}

impl Hand {
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.scores.iter().map(|r| r[i]).collect()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.scores.iter().map(|r| sum(r)).collect()
    }

    /// Group of each person: ranks by (total, row) cut into equal thirds.
    pub fn groups(&self) -> Vec<usize> {
        let t = self.totals();
        let n = t.len();
        let mut idx: Vec<usize> = (0..n).collect();
        // Insertion sort keeps ties in row order.
        for a in 1..n {
            let mut b = a;
            while b > 0 && t[idx[b - 1]] > t[idx[b]] {
                idx.swap(b - 1, b);
                b -= 1;
            }
        }
        let mut g = vec![0; n];
        for (rank, p) in idx.into_iter().enumerate() {
            g[p] = rank * GROUPS / n;
        }
        g
    }

    pub fn difficulty(&self, i: usize) -> f64 {
        sum(&self.column(i)) / self.scores.len() as f64 / self.max[i]
    }

    pub fn rit(&self, i: usize) -> f64 {
        corr(&self.column(i), &self.totals())
    }

    pub fn rir(&self, i: usize) -> f64 {
        let rest: Vec<f64> = self.totals().iter().zip(self.column(i)).map(|(t, v)| t - v).collect();
        corr(&self.column(i), &rest)
    }

    pub fn uli(&self, i: usize) -> f64 {
        let g = self.groups();
        let mean_in = |target: usize| {
            let v: Vec<f64> = (0..g.len()).filter(|&p| g[p] == target).map(|p| self.scores[p][i]).collect();
            sum(&v) / v.len() as f64
        };
        (mean_in(GROUPS - 1) - mean_in(0)) / self.max[i]
    }

    /// Option proportions of i4 per group, columns in [`I4_OPTIONS`] order.
    pub fn distractors(&self) -> Vec<Vec<f64>> {
        let g = self.groups();
        (0..GROUPS)
            .map(|target| {
                let members: Vec<usize> = (0..g.len()).filter(|&p| g[p] == target).collect();
                I4_OPTIONS
                    .iter()
                    .map(|o| members.iter().filter(|&&p| self.raw[p][3] == *o).count() as f64 / members.len() as f64)
                    .collect()
            })
            .collect()
    }

    pub fn alpha(&self) -> f64 {
        let k = 5.0;
        let item_var: f64 = sum(&(0..5).map(|i| var(&self.column(i))).collect::<Vec<_>>());
        k / (k - 1.0) * (1.0 - item_var / var(&self.totals()))
    }
}
