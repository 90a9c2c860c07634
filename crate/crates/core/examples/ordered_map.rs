//! The Harris-Michael list and the hashmap as ordered / unordered maps.

use wfe_reclaim::rideables::{HarrisList, HashMap};
use wfe_reclaim::{He, Hp, TrackerConfig};

fn main() -> wfe_reclaim::Result<()> {
    let mut list = HarrisList::new(Hp::new(TrackerConfig::new(1))?);
    {
        let mut h = list.register()?;
        for k in [5, 1, 9, 3] {
            list.insert(&mut h, k, k * 10);
        }
        list.remove(&mut h, 9);
        println!("put(3) replaced {:?}", list.put(&mut h, 3, 33));
    }
    println!("list entries: {:?}", list.entries());

    let mut map = HashMap::with_buckets(He::new(TrackerConfig::new(1))?, 4)?;
    {
        let mut h = map.register()?;
        for k in 0..10 {
            map.insert(&mut h, k, k * k);
        }
        println!("get(7) = {:?}", map.get(&mut h, 7));
    }
    println!("hashmap entries: {:?}", map.entries());
    Ok(())
}
