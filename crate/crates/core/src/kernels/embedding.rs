use crate::error::{Error, Result};
use crate::tensor::{IdTensor, Scalar, Tensor};

fn check_table<T: Scalar>(table: &Tensor<T>) -> Result<(usize, usize)> {
    match *table.shape() {
        [rows, dim] => Ok((rows, dim)),
        ref s => Err(Error::shape(format!("embedding table must be rank 2, got {s:?}"))),
    }
}

/// Gathers `table[ids[b, j]]` into a `[batch, len, dim]` tensor. Row 0 is the padding row.
pub fn embedding_lookup<T: Scalar>(table: &Tensor<T>, ids: &IdTensor) -> Result<Tensor<T>> {
    let (rows, dim) = check_table(table)?;
    let mut out = Vec::with_capacity(ids.data().len() * dim);
    for &id in ids.data() {
        let id = id as usize;
        if id >= rows {
            return Err(Error::Index { index: id, rows });
        }
        out.extend_from_slice(&table.data()[id * dim..(id + 1) * dim]);
    }
    Tensor::from_vec(&[ids.batch(), ids.len(), dim], out)
}

/// Scatter-adds `grad_out` rows into `table_grad`, including the padding row.
pub fn embedding_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    ids: &IdTensor,
    table_grad: &mut Tensor<T>,
) -> Result<()> {
    let (rows, dim) = check_table(table_grad)?;
    if grad_out.shape() != [ids.batch(), ids.len(), dim] {
        return Err(Error::shape(format!(
            "embedding grad {:?} does not match ids [{}, {}] x {dim}",
            grad_out.shape(),
            ids.batch(),
            ids.len()
        )));
    }
    let g = grad_out.data();
    let tg = table_grad.data_mut();
    for (pos, &id) in ids.data().iter().enumerate() {
        let id = id as usize;
        if id >= rows {
            return Err(Error::Index { index: id, rows });
        }
        let src = &g[pos * dim..(pos + 1) * dim];
        for (t, &s) in tg[id * dim..(id + 1) * dim].iter_mut().zip(src) {
            *t = *t + s;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(rows: usize, dim: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[rows, dim]);
        for r in 0..rows {
            t.data_mut()[r * dim + r % dim] = 1.0 + r as f64;
        }
        t
    }

    #[test]
    fn lookup_copies_rows() {
        let table = basis(4, 3);
        let ids = IdTensor::new(1, 1, vec![2]).unwrap();
        let out = embedding_lookup(&table, &ids).unwrap();
        assert_eq!(out.shape(), &[1, 1, 3]);
        assert_eq!(out.data(), &table.data()[6..9]);
    }

    #[test]
    fn all_padding_repeats_row_zero() {
        let table = basis(4, 3);
        let ids = IdTensor::new(2, 3, vec![0; 6]).unwrap();
        let out = embedding_lookup(&table, &ids).unwrap();
        for chunk in out.data().chunks(3) {
            assert_eq!(chunk, &table.data()[0..3]);
        }
    }

    #[test]
    fn out_of_range_id_is_rejected() {
        let table = basis(4, 3);
        let ids = IdTensor::new(1, 2, vec![1, 4]).unwrap();
        assert!(matches!(embedding_lookup(&table, &ids), Err(Error::Index { index: 4, rows: 4 })));
    }

    #[test]
    fn backward_scatter_adds_repeated_ids() {
        let ids = IdTensor::new(1, 2, vec![1, 1]).unwrap();
        let g = Tensor::from_vec(&[1, 2, 3], vec![0.5, 1.0, -2.0, 0.25, 3.0, 4.0]).unwrap();
        let mut tg = Tensor::<f64>::zeros(&[3, 3]);
        embedding_backward(&g, &ids, &mut tg).unwrap();

        // Brute-force oracle: row r accumulates every position whose id is r.
        let mut expect = vec![0.0; 9];
        for (pos, &id) in ids.data().iter().enumerate() {
            for c in 0..3 {
                expect[id as usize * 3 + c] += g.data()[pos * 3 + c];
            }
        }
        assert_eq!(tg.data(), expect.as_slice());
        assert_eq!(&tg.data()[3..6], &[0.75, 4.0, 2.0]);
        assert!(tg.data()[..3].iter().all(|&v| v == 0.0));
    }
}
