use crate::error::{Error, Result};
use crate::etiology::{Etiology, CLASS_COUNT};

/// Cohen's kappa with marginal-product chance agreement.
pub fn cohen_kappa(a: &[Etiology], b: &[Etiology]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "cohen_kappa length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("cohen_kappa needs at least one case"));
    }
    let n = a.len() as f64;
    let mut ma = [0usize; CLASS_COUNT];
    let mut mb = [0usize; CLASS_COUNT];
    let mut agree = 0usize;
    for (x, y) in a.iter().zip(b) {
        ma[x.index()] += 1;
        mb[y.index()] += 1;
        agree += usize::from(x == y);
    }
    let po = agree as f64 / n;
    let pe: f64 = (0..CLASS_COUNT)
        .map(|c| (ma[c] as f64 / n) * (mb[c] as f64 / n))
        .sum();
    Ok(kappa(po, pe))
}

fn kappa(po: f64, pe: f64) -> f64 {
    if pe >= 1.0 {
        // Both raters used a single, shared category.
        if po >= 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (po - pe) / (1.0 - pe)
    }
}

/// Per-case category counts from label lists, one list per rater.
pub fn rating_counts(raters: &[&[Etiology]]) -> Result<Vec<[usize; CLASS_COUNT]>> {
    let Some(first) = raters.first() else {
        return Ok(Vec::new());
    };
    if raters.iter().any(|r| r.len() != first.len()) {
        return Err(Error::invalid("rater label lists differ in length"));
    }
    Ok((0..first.len())
        .map(|i| {
            let mut row = [0; CLASS_COUNT];
            for r in raters {
                row[r[i].index()] += 1;
            }
            row
        })
        .collect())
}

/// Fleiss (1971) kappa from an n_cases x 6 count matrix.
pub fn fleiss_kappa(ratings: &[[usize; CLASS_COUNT]]) -> Result<f64> {
    let Some(first) = ratings.first() else {
        return Err(Error::invalid("fleiss_kappa needs at least one case"));
    };
    let m: usize = first.iter().sum();
    if m < 2 {
        return Err(Error::invalid(format!("fleiss_kappa needs >= 2 raters per case, got {m}")));
    }
    if let Some((i, _)) = ratings
        .iter()
        .enumerate()
        .find(|(_, r)| r.iter().sum::<usize>() != m)
    {
        return Err(Error::invalid(format!(
            "fleiss_kappa: case {i} has a row sum different from {m}"
        )));
    }
    let n = ratings.len() as f64;
    let mf = m as f64;
    let mut totals = [0usize; CLASS_COUNT];
    let mut p_bar = 0.0;
    for r in ratings {
        let same: usize = r.iter().map(|&c| c * c.saturating_sub(1)).sum();
        p_bar += same as f64 / (mf * (mf - 1.0));
        for c in 0..CLASS_COUNT {
            totals[c] += r[c];
        }
    }
    p_bar /= n;
    let pe: f64 = totals
        .iter()
        .map(|&t| {
            let p = t as f64 / (n * mf);
            p * p
        })
        .sum();
    Ok(kappa(p_bar, pe))
}
